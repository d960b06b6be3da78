"""Config and sweep file parsing.

Files are JSON with explicit keys mirroring the engine configuration;
unknown keys are rejected so that sweep results stay interpretable.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

from .engine import Criterion, EngineConfig, Mode, Replacement
from .errors import ConfigError
from .models import NeuralLM, NeuralLMParams, make_draft_of

DEFAULT_MAX_CELLS = 10_000


@dataclass(frozen=True)
class ModelSpec:
    vocab_size: int = 256
    hidden_dim: int = 64
    context: int = 4
    seed: int = 0

    def build(self) -> NeuralLM:
        return NeuralLM(
            NeuralLMParams.random(
                self.seed,
                vocab_size=self.vocab_size,
                hidden_dim=self.hidden_dim,
                context=self.context,
            )
        )


@dataclass(frozen=True)
class DraftSpec:
    epsilon: float = 0.0
    seed: int = 0

    def build(self, target: NeuralLM) -> NeuralLM:
        return NeuralLM(make_draft_of(target.params, self.epsilon, self.seed))


@dataclass(frozen=True)
class RunConfig:
    engine: EngineConfig
    model: ModelSpec
    draft: DraftSpec | None
    prompt: list[int] | None


@dataclass(frozen=True)
class SweepSpec:
    """Cartesian sweep over criterion, p_drop, K, L and draft perturbation.

    Cells enumerate in nested declared order (criterion outermost,
    repetition innermost); cell i runs with seed ``base_seed + i``.
    """

    criterion: list[Criterion]
    p_drop: list[float]
    K: list[int]
    L: list[int]
    epsilon: list[float]
    repetitions: int
    base_seed: int
    prompts: list[list[int]]
    model: ModelSpec
    draft_seed: int
    max_tokens: int
    mode: Mode
    rejection_replacement: Replacement
    strict_majority: bool
    measure_timing: bool
    max_cells: int = DEFAULT_MAX_CELLS
    eos_token: int | None = None

    def cell_count(self) -> int:
        return (
            len(self.criterion)
            * len(self.p_drop)
            * len(self.K)
            * len(self.L)
            * len(self.epsilon)
            * self.repetitions
        )

    def cells(self):
        """Yield (index, criterion, p_drop, K, L, epsilon, repetition)."""
        grid = itertools.product(
            self.criterion, self.p_drop, self.K, self.L, self.epsilon, range(self.repetitions)
        )
        for index, (criterion, p_drop, k, length, epsilon, rep) in enumerate(grid):
            yield index, criterion, p_drop, k, length, epsilon, rep


def load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top-level value must be an object")
    return obj


def _take(obj: dict, key: str, kind, default, *, required: bool = False, where: str = ""):
    if key not in obj:
        if required:
            raise ConfigError(f"missing required key {where}{key}")
        return default
    value = obj.pop(key)
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {where}{key}: {value!r}") from exc


def _reject_unknown(obj: dict, where: str) -> None:
    if obj:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(obj))}")


def _int_list(value) -> list[int]:
    if not isinstance(value, list) or not value:
        raise ValueError(value)
    return [int(x) for x in value]


def _float_list(value) -> list[float]:
    if not isinstance(value, list) or not value:
        raise ValueError(value)
    return [float(x) for x in value]


def _criterion_list(value) -> list[Criterion]:
    if not isinstance(value, list) or not value:
        raise ValueError(value)
    return [Criterion(x) for x in value]


def _prompt_list(value) -> list[list[int]]:
    if not isinstance(value, list) or not value:
        raise ValueError(value)
    return [[int(t) for t in prompt] for prompt in value]


def _optional_int(value):
    return None if value is None else int(value)


def parse_model_spec(obj, where: str = "model.") -> ModelSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where.rstrip('.')} must be an object")
    obj = dict(obj)
    spec = ModelSpec(
        vocab_size=_take(obj, "vocab_size", int, 256, where=where),
        hidden_dim=_take(obj, "hidden_dim", int, 64, where=where),
        context=_take(obj, "context", int, 4, where=where),
        seed=_take(obj, "seed", int, 0, where=where),
    )
    _reject_unknown(obj, "model")
    if spec.vocab_size < 2:
        raise ConfigError(f"model.vocab_size must be >= 2, got {spec.vocab_size}")
    if spec.hidden_dim < 1:
        raise ConfigError(f"model.hidden_dim must be >= 1, got {spec.hidden_dim}")
    if spec.context < 1:
        raise ConfigError(f"model.context must be >= 1, got {spec.context}")
    return spec


def parse_run_config(obj: dict, seed_override: int | None = None) -> RunConfig:
    obj = dict(obj)
    engine = EngineConfig(
        criterion=_take(obj, "criterion", Criterion, Criterion.DROPMATCH_JS),
        L=_take(obj, "L", int, 5),
        K=_take(obj, "K", int, 5),
        p_drop=_take(obj, "p_drop", float, 0.3),
        seed=seed_override if seed_override is not None else _take(obj, "seed", int, 0),
        max_tokens=_take(obj, "max_tokens", int, 128),
        mode=_take(obj, "mode", Mode, Mode.GREEDY),
        rejection_replacement=_take(
            obj, "rejection_replacement", Replacement, Replacement.DETERMINISTIC_ARGMAX
        ),
        strict_majority=_take(obj, "strict_majority", bool, False),
        eos_token=_take(obj, "eos_token", _optional_int, None),
        measure_timing=_take(obj, "measure_timing", bool, False),
    )
    if seed_override is not None:
        obj.pop("seed", None)
    model = parse_model_spec(obj.pop("model", {}))
    draft_obj = obj.pop("draft", None)
    draft = None
    if draft_obj is not None:
        if not isinstance(draft_obj, dict):
            raise ConfigError("draft must be an object")
        draft_obj = dict(draft_obj)
        draft = DraftSpec(
            epsilon=_take(draft_obj, "epsilon", float, 0.0, where="draft."),
            seed=_take(draft_obj, "seed", int, 0, where="draft."),
        )
        _reject_unknown(draft_obj, "draft")
        if draft.epsilon < 0:
            raise ConfigError(f"draft.epsilon must be >= 0, got {draft.epsilon}")
    prompt = obj.pop("prompt", None)
    if prompt is not None:
        if not isinstance(prompt, list) or not prompt:
            raise ConfigError("prompt must be a nonempty list of token ids")
        prompt = [int(t) for t in prompt]
        for tok in prompt:
            if not 0 <= tok < model.vocab_size:
                raise ConfigError(f"prompt token {tok} outside vocabulary of size {model.vocab_size}")
    _reject_unknown(obj, "config")
    engine.validate()
    return RunConfig(engine=engine, model=model, draft=draft, prompt=prompt)


def parse_sweep(obj: dict, seed_override: int | None = None) -> SweepSpec:
    obj = dict(obj)
    spec = SweepSpec(
        criterion=_take(obj, "criterion", _criterion_list, [Criterion.DROPMATCH_JS]),
        p_drop=_take(obj, "p_drop", _float_list, [0.3]),
        K=_take(obj, "K", _int_list, [5]),
        L=_take(obj, "L", _int_list, [5]),
        epsilon=_take(obj, "epsilon", _float_list, [0.0]),
        repetitions=_take(obj, "repetitions", int, 1),
        base_seed=seed_override if seed_override is not None else _take(obj, "base_seed", int, 0),
        prompts=_take(obj, "prompts", _prompt_list, None, required=True),
        model=parse_model_spec(obj.pop("model", {})),
        draft_seed=_take(obj, "draft_seed", int, 1),
        max_tokens=_take(obj, "max_tokens", int, 64),
        mode=_take(obj, "mode", Mode, Mode.GREEDY),
        rejection_replacement=_take(
            obj, "rejection_replacement", Replacement, Replacement.DETERMINISTIC_ARGMAX
        ),
        strict_majority=_take(obj, "strict_majority", bool, False),
        measure_timing=_take(obj, "measure_timing", bool, False),
        max_cells=_take(obj, "max_cells", int, DEFAULT_MAX_CELLS),
        eos_token=_take(obj, "eos_token", _optional_int, None),
    )
    if seed_override is not None:
        obj.pop("base_seed", None)
    _reject_unknown(obj, "sweep")
    if spec.repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {spec.repetitions}")
    for p in spec.p_drop:
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"p_drop must lie in [0, 1), got {p}")
    for e in spec.epsilon:
        if e < 0:
            raise ConfigError(f"epsilon must be >= 0, got {e}")
    if spec.cell_count() > spec.max_cells:
        raise ConfigError(
            f"sweep has {spec.cell_count()} cells, exceeding max_cells={spec.max_cells}"
        )
    for prompt in spec.prompts:
        if not prompt:
            raise ConfigError("prompts must be nonempty token lists")
        for tok in prompt:
            if not 0 <= tok < spec.model.vocab_size:
                raise ConfigError(
                    f"prompt token {tok} outside vocabulary of size {spec.model.vocab_size}"
                )
    return spec

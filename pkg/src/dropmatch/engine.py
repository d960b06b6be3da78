"""The speculative-decoding loop.

Each round the draft model proposes L tokens, the target verifies them
position by position under the configured acceptance criterion, and the
first rejection truncates everything after it. Every verification step
emits exactly one bonus token: the replacement on rejection, or the
target's own next-token choice after full acceptance. A decode stream is
sequential by nature; independent streams with distinct seeds may run
concurrently and share no mutable state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import rng as rnglib
from .acceptance import (
    AcceptanceDecision,
    Branch,
    DraftToken,
    centroid,
    dropmatch_accept,
    lossless_accept,
    naive_match,
)
from .errors import ConfigError
from .mc_head import mc_head_sample
from .models import LanguageModel
from .rng import sample_index


class Criterion(str, Enum):
    LOSSLESS = "lossless"
    GREEDY_MATCH = "greedy_match"
    NAIVE = "naive"
    DROPMATCH_JS = "dropmatch_js"


class Mode(str, Enum):
    GREEDY = "greedy"
    SAMPLED = "sampled"


class Replacement(str, Enum):
    DETERMINISTIC_ARGMAX = "deterministic_argmax"
    CENTROID_ARGMAX = "centroid_argmax"


MC_CRITERIA = (Criterion.NAIVE, Criterion.DROPMATCH_JS)


@dataclass(frozen=True)
class EngineConfig:
    criterion: Criterion = Criterion.DROPMATCH_JS
    L: int = 5
    K: int = 5
    p_drop: float = 0.3
    seed: int = 0
    max_tokens: int = 128
    mode: Mode = Mode.GREEDY
    rejection_replacement: Replacement = Replacement.DETERMINISTIC_ARGMAX
    strict_majority: bool = False
    eos_token: int | None = None
    # Timing-derived summary fields are serialized only when enabled, so
    # that default outputs stay byte-identical across runs.
    measure_timing: bool = False

    def validate(self) -> None:
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if not 0.0 <= self.p_drop < 1.0:
            raise ConfigError(f"p_drop must lie in [0, 1), got {self.p_drop}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


@dataclass(frozen=True)
class StepRecord:
    """Outcome of one verification step.

    ``decisions`` has one slot per proposed position; slots after the
    first rejection are None (never evaluated). The step emits
    ``accepted_count`` draft tokens plus the bonus token.
    """

    proposed: list[DraftToken]
    accepted_count: int
    bonus_token: int
    decisions: list[AcceptanceDecision | None]
    wall_time_total: int  # ns
    wall_time_head: int  # ns


def draft_propose(
    draft_model: LanguageModel,
    context,
    length: int,
    mode: Mode = Mode.GREEDY,
    rng: np.random.Generator | None = None,
) -> list[DraftToken]:
    """Autoregressive draft rollout of ``length`` tokens.

    Each proposal is conditioned on the context plus the tokens proposed
    before it and carries the draft model's full distribution.
    """
    ctx = list(context)
    proposal: list[DraftToken] = []
    for _ in range(length):
        dist = draft_model.next_dist(ctx)
        if mode == Mode.SAMPLED:
            token = sample_index(dist, rng)
        else:
            token = int(np.argmax(dist))
        proposal.append(DraftToken(token_id=token, dist=dist))
        ctx.append(token)
    return proposal


def _mask_streams(seed: int, position: int, k: int):
    return [rnglib.stream(seed, rnglib.MASK, position, i) for i in range(k)]


def verify_step(
    target_model: LanguageModel,
    context,
    proposal,
    cfg: EngineConfig,
    step_index: int = 0,
    position_base: int = 0,
    sink=None,
) -> StepRecord:
    """Verify one proposal against the target, stopping at the first rejection.

    Hidden states are recomputed exactly against the accepted prefix for
    every position. ``position_base`` is the global index of the first
    position in this step; it keys the per-position mask and acceptance
    streams, so sampling never depends on how earlier steps unfolded
    internally. ``sink(position, hidden, draft, samples, decision)`` is
    invoked for every evaluated position. Head wall time covers only the
    dropout-head sampling and criterion evaluation.
    """
    t_start = time.perf_counter_ns()
    head_ns = 0
    run_mc = cfg.criterion in MC_CRITERIA
    decisions: list[AcceptanceDecision | None] = [None] * len(proposal)
    accepted_tokens: list[int] = []
    bonus: int | None = None

    for offset, draft in enumerate(proposal):
        position = position_base + offset
        ctx = list(context) + accepted_tokens
        if run_mc:
            hidden = target_model.hidden_state(ctx)
            streams = _mask_streams(cfg.seed, position, cfg.K)
            t_head = time.perf_counter_ns()
            samples = mc_head_sample(
                target_model.head_weights, hidden, cfg.K, cfg.p_drop, streams
            )
            if cfg.criterion == Criterion.DROPMATCH_JS:
                decision = dropmatch_accept(draft, samples, strict_majority=cfg.strict_majority)
            else:
                decision = naive_match(draft, samples)
            head_ns += time.perf_counter_ns() - t_head
            replacement = None
        else:
            samples = None
            hidden = None
            target_dist = target_model.next_dist(ctx)
            greedy = cfg.criterion == Criterion.GREEDY_MATCH or cfg.mode == Mode.GREEDY
            acc_rng = rnglib.stream(cfg.seed, rnglib.LOSSLESS, position)
            ok, replacement = lossless_accept(draft, target_dist, acc_rng, greedy=greedy)
            decision = AcceptanceDecision(
                accepted=ok, branch=Branch.LOSSLESS_PASS if ok else Branch.REJECTED
            )

        decisions[offset] = decision
        if sink is not None:
            if hidden is None and sink_wants_hidden(sink) and target_model.has_hidden_state:
                hidden = target_model.hidden_state(ctx)
            sink(position, hidden, draft, samples, decision)

        if decision.accepted:
            accepted_tokens.append(int(draft.token_id))
            continue

        # First rejection: pick the replacement token and stop.
        if run_mc:
            if cfg.rejection_replacement == Replacement.CENTROID_ARGMAX:
                bonus = int(np.argmax(centroid(samples)))
            else:
                bonus = int(np.argmax(samples.deterministic_dist))
        else:
            bonus = int(replacement)
        break

    if bonus is None:
        # Full acceptance: the target contributes its own next token.
        ctx = list(context) + accepted_tokens
        dist = target_model.next_dist(ctx)
        if cfg.mode == Mode.SAMPLED:
            bonus = sample_index(dist, rnglib.stream(cfg.seed, rnglib.BONUS, step_index))
        else:
            bonus = int(np.argmax(dist))

    return StepRecord(
        proposed=list(proposal),
        accepted_count=len(accepted_tokens),
        bonus_token=bonus,
        decisions=decisions,
        wall_time_total=time.perf_counter_ns() - t_start,
        wall_time_head=head_ns,
    )


def sink_wants_hidden(sink) -> bool:
    """Sinks may opt out of hidden states to skip the extra forward pass."""
    return getattr(sink, "wants_hidden", True)


def evaluated_positions(record: StepRecord) -> int:
    """Number of verification positions actually evaluated in a step."""
    rejected = record.accepted_count < len(record.proposed)
    return record.accepted_count + (1 if rejected else 0)


def decode(
    draft_model: LanguageModel,
    target_model: LanguageModel,
    prompt,
    cfg: EngineConfig,
    sink=None,
) -> tuple[list[int], list[StepRecord]]:
    """Speculatively decode until ``max_tokens`` are emitted or EOS appears.

    Returns the emitted tokens (prompt excluded) and the per-step records.
    The result is a pure function of (models, prompt, cfg).
    """
    cfg.validate()
    if draft_model.vocab_size != target_model.vocab_size:
        raise ConfigError(
            f"draft vocabulary {draft_model.vocab_size} != target {target_model.vocab_size}"
        )
    if cfg.criterion in MC_CRITERIA and not target_model.has_hidden_state:
        raise ConfigError(f"criterion {cfg.criterion.value} requires a target with hidden states")

    context = list(prompt)
    out: list[int] = []
    records: list[StepRecord] = []
    step_index = 0
    position_base = 0

    while len(out) < cfg.max_tokens:
        draft_rng = (
            rnglib.stream(cfg.seed, rnglib.DRAFT, step_index) if cfg.mode == Mode.SAMPLED else None
        )
        proposal = draft_propose(draft_model, context, cfg.L, mode=cfg.mode, rng=draft_rng)
        record = verify_step(
            target_model,
            context,
            proposal,
            cfg,
            step_index=step_index,
            position_base=position_base,
            sink=sink,
        )
        records.append(record)

        emitted = [p.token_id for p in proposal[: record.accepted_count]] + [record.bonus_token]
        emitted = emitted[: cfg.max_tokens - len(out)]
        stop = False
        if cfg.eos_token is not None and cfg.eos_token in emitted:
            emitted = emitted[: emitted.index(cfg.eos_token) + 1]
            stop = True
        out.extend(emitted)
        context.extend(emitted)
        position_base += evaluated_positions(record)
        step_index += 1
        if stop:
            break

    return out, records

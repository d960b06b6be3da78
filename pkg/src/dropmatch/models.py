"""Desk-scale language models and trace records.

Three sources of next-token distributions: an n-gram lookup table with
uniform backoff, a seeded recurrent model that exposes its hidden state
and head weights (so the dropout head can verify against it), and JSONL
trace records that let previously logged hidden states drive the
acceptance kernel without any model forward. Models are immutable after
construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as rnglib
from .core_math import softmax, validate_prob_dist
from .errors import ValidationError

# Pinned scale of the head weight initialization. Chosen so the toy
# model's distributions are peaked but not collapsed, which keeps the
# acceptance dynamics nondegenerate.
HEAD_SCALE = 4.0

TRACE_PROB_TOL = 1e-6


class LanguageModel:
    """Minimal model surface: a vocabulary and a next-token distribution.

    Models exposing a hidden state (``has_hidden_state``) can also serve
    as verification targets for the dropout head.
    """

    vocab_size: int
    hidden_dim: int | None = None
    has_hidden_state = False
    is_replay = False

    def next_dist(self, context) -> np.ndarray:
        raise NotImplementedError

    def hidden_state(self, context) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no hidden state")

    @property
    def head_weights(self) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no head weights")


class TableLM(LanguageModel):
    """Order-n conditional table with uniform backoff.

    The table maps context tuples (the last ``order`` tokens) to full
    probability vectors; contexts not in the table yield the uniform
    distribution. Fully enumerable, which makes it oracle-friendly.
    """

    def __init__(self, vocab_size: int, order: int, table=None):
        self.vocab_size = int(vocab_size)
        self.order = int(order)
        self.table = {}
        for key, dist in (table or {}).items():
            arr = validate_prob_dist(dist)
            if arr.size != self.vocab_size:
                raise ValidationError(
                    f"table entry for {key} has length {arr.size}, expected {self.vocab_size}"
                )
            self.table[tuple(key)] = arr

    def next_dist(self, context) -> np.ndarray:
        key = tuple(context[-self.order:]) if self.order > 0 else ()
        dist = self.table.get(key)
        if dist is None:
            return np.full(self.vocab_size, 1.0 / self.vocab_size)
        return dist


@dataclass(frozen=True)
class NeuralLMParams:
    """Parameters of the recurrent toy model, generated from a seed."""

    embedding: np.ndarray  # (d, V)
    mixing: np.ndarray  # (d, d)
    head: np.ndarray  # (V, d)
    context: int

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.embedding.shape[0]

    @classmethod
    def random(cls, seed: int, vocab_size: int = 256, hidden_dim: int = 64, context: int = 4):
        gen = rnglib.stream(seed, rnglib.PARAMS)
        embedding = gen.standard_normal((hidden_dim, vocab_size))
        mixing = gen.standard_normal((hidden_dim, hidden_dim)) / np.sqrt(hidden_dim)
        head = gen.standard_normal((vocab_size, hidden_dim)) * (HEAD_SCALE / np.sqrt(hidden_dim))
        return cls(embedding=embedding, mixing=mixing, head=head, context=int(context))


def neural_lm_forward(params: NeuralLMParams, context) -> tuple[np.ndarray, np.ndarray]:
    """Hidden state and next-token distribution for a context.

    The last ``params.context`` token embeddings are folded through the
    mixing matrix with a tanh recurrence (tanh is the pinned saturating
    nonlinearity); the distribution is the softmax of the head projection.
    Deterministic given (params, context).
    """
    if len(context) == 0:
        raise ValidationError("context must be nonempty")
    window = list(context)[-params.context:]
    v = params.vocab_size
    for tok in window:
        if not 0 <= int(tok) < v:
            raise ValidationError(f"token id {tok} outside vocabulary of size {v}")
    state = np.zeros(params.hidden_dim)
    for tok in window:
        state = np.tanh(params.mixing @ state + params.embedding[:, int(tok)])
    return state, softmax(params.head @ state)


class NeuralLM(LanguageModel):
    """Recurrent toy model wrapper exposing hidden states and head weights."""

    has_hidden_state = True

    def __init__(self, params: NeuralLMParams):
        self.params = params
        self.vocab_size = params.vocab_size
        self.hidden_dim = params.hidden_dim

    @classmethod
    def random(cls, seed: int, **kwargs) -> "NeuralLM":
        return cls(NeuralLMParams.random(seed, **kwargs))

    def forward(self, context) -> tuple[np.ndarray, np.ndarray]:
        return neural_lm_forward(self.params, context)

    def hidden_state(self, context) -> np.ndarray:
        return neural_lm_forward(self.params, context)[0]

    def next_dist(self, context) -> np.ndarray:
        return neural_lm_forward(self.params, context)[1]

    @property
    def head_weights(self) -> np.ndarray:
        return self.params.head


def make_draft_of(target: NeuralLMParams, perturbation: float, seed: int) -> NeuralLMParams:
    """Copy of ``target`` with seeded noise of scale ``perturbation`` added.

    Zero perturbation yields a bit-identical copy; larger values move the
    draft further from the target, on average.
    """
    if perturbation < 0.0:
        raise ValidationError(f"perturbation must be >= 0, got {perturbation}")
    if perturbation == 0.0:
        return NeuralLMParams(
            embedding=target.embedding.copy(),
            mixing=target.mixing.copy(),
            head=target.head.copy(),
            context=target.context,
        )
    gen = rnglib.stream(seed, rnglib.PERTURB)
    return NeuralLMParams(
        embedding=target.embedding + perturbation * gen.standard_normal(target.embedding.shape),
        mixing=target.mixing + perturbation * gen.standard_normal(target.mixing.shape),
        head=target.head + perturbation * gen.standard_normal(target.head.shape),
        context=target.context,
    )


@dataclass(frozen=True)
class TraceRecord:
    """One logged verification position: hidden state plus draft proposal."""

    step: int
    hidden: np.ndarray
    draft_probs: np.ndarray
    draft_token: int


@dataclass(frozen=True)
class Trace:
    """Parsed trace file: header dimensions plus records in step order."""

    d: int | None
    v: int | None
    records: list[TraceRecord] = field(default_factory=list)


_HEADER_KEYS = {"header", "d", "v"}
_RECORD_KEYS = {"step", "hidden", "draft_probs", "draft_token"}


def load_trace(path) -> Trace:
    """Parse and validate a JSONL trace.

    The first nonblank line must be the header ``{"header": true, "d": ...,
    "v": ...}``; every following line is a record with exactly the fields
    step/hidden/draft_probs/draft_token. Steps must be strictly increasing
    and draft_probs normalized within 1e-6. An empty file yields an empty
    trace.
    """
    d = v = None
    records: list[TraceRecord] = []
    last_step = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"line {lineno}: malformed JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ValidationError(f"line {lineno}: expected a JSON object")
            if obj.get("header"):
                if d is not None or records:
                    raise ValidationError(f"line {lineno}: duplicate header")
                if set(obj) != _HEADER_KEYS:
                    raise ValidationError(
                        f"line {lineno}: header keys must be exactly {sorted(_HEADER_KEYS)}"
                    )
                d, v = int(obj["d"]), int(obj["v"])
                if d < 1 or v < 2:
                    raise ValidationError(f"line {lineno}: invalid header dimensions d={d}, v={v}")
                continue
            if d is None:
                raise ValidationError(f"line {lineno}: record before header")
            if set(obj) != _RECORD_KEYS:
                raise ValidationError(
                    f"line {lineno}: record keys must be exactly {sorted(_RECORD_KEYS)}"
                )
            step = int(obj["step"])
            if last_step is not None and step <= last_step:
                raise ValidationError(f"step {step}: steps must be strictly increasing")
            hidden = np.asarray(obj["hidden"], dtype=np.float64)
            if hidden.shape != (d,):
                raise ValidationError(f"step {step}: hidden has length {hidden.size}, expected {d}")
            if not np.all(np.isfinite(hidden)):
                raise ValidationError(f"step {step}: hidden must be finite")
            try:
                probs = validate_prob_dist(obj["draft_probs"], tol=TRACE_PROB_TOL)
            except ValidationError as exc:
                raise ValidationError(f"step {step}: draft_probs invalid: {exc}") from exc
            if probs.size != v:
                raise ValidationError(
                    f"step {step}: draft_probs has length {probs.size}, expected {v}"
                )
            token = int(obj["draft_token"])
            if not 0 <= token < v:
                raise ValidationError(f"step {step}: draft_token {token} outside vocabulary")
            records.append(
                TraceRecord(step=step, hidden=hidden, draft_probs=probs, draft_token=token)
            )
            last_step = step
    return Trace(d=d, v=v, records=records)


def write_trace(path, d: int, v: int, records) -> None:
    """Write a trace file; floats are serialized at full round-trip precision."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"header": True, "d": int(d), "v": int(v)}) + "\n")
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "step": int(rec.step),
                        "hidden": [float(x) for x in rec.hidden],
                        "draft_probs": [float(x) for x in rec.draft_probs],
                        "draft_token": int(rec.draft_token),
                    }
                )
                + "\n"
            )


class TraceRecorder:
    """Position sink that collects trace records during a decode."""

    def __init__(self):
        self.records: list[TraceRecord] = []

    def __call__(self, position, hidden, draft, samples, decision) -> None:
        if hidden is None:
            raise ValidationError("cannot record a trace without target hidden states")
        self.records.append(
            TraceRecord(
                step=int(position),
                hidden=np.asarray(hidden, dtype=np.float64).copy(),
                draft_probs=np.asarray(draft.dist, dtype=np.float64).copy(),
                draft_token=int(draft.token_id),
            )
        )

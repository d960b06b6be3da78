"""Monte Carlo dropout sampling at the LM head.

One hidden state fans out into K stochastic logit/probability paths by
masking the head input with fresh Bernoulli masks under inverted-dropout
scaling. All paths share the same head weights; a deterministic
(no-dropout) distribution is kept alongside the sampled paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_math import softmax
from .errors import ConfigError, ValidationError


@dataclass(frozen=True)
class DropoutMask:
    """Binary keep/drop mask with the keep probability it was drawn at."""

    bits: np.ndarray  # {0.0, 1.0} per coordinate
    keep_prob: float


@dataclass(frozen=True)
class HeadSampleSet:
    """K dropout paths through the head plus the no-dropout reference.

    Row i of ``dists`` is the softmax of row i of ``logits``, and
    ``argmax_tokens[i]`` is its argmax.
    """

    logits: np.ndarray  # (K, V)
    dists: np.ndarray  # (K, V)
    argmax_tokens: np.ndarray  # (K,), int64
    deterministic_dist: np.ndarray  # (V,)
    k: int
    p_drop: float


def sample_mask(d: int, p_drop: float, rng: np.random.Generator) -> DropoutMask:
    """Draw a Bernoulli(1 - p_drop) keep mask of length ``d``."""
    if not 0.0 <= p_drop < 1.0:
        raise ConfigError(f"p_drop must lie in [0, 1), got {p_drop}")
    keep = 1.0 - p_drop
    bits = (rng.random(d) < keep).astype(np.float64)
    return DropoutMask(bits=bits, keep_prob=keep)


def apply_dropout(h: np.ndarray, mask: DropoutMask, p_drop: float) -> np.ndarray:
    """Mask ``h`` and rescale survivors by 1/(1 - p_drop).

    Dropped coordinates map to exact zero; the scaling keeps the
    expectation over masks equal to ``h``.
    """
    h = np.asarray(h, dtype=np.float64)
    if p_drop >= 1.0:
        raise ConfigError(f"p_drop must be < 1, got {p_drop}")
    if h.shape != mask.bits.shape:
        raise ValidationError(f"length mismatch: hidden {h.shape} vs mask {mask.bits.shape}")
    return (h * mask.bits) / (1.0 - p_drop)


def head_forward(weights: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Head projection: the (V, d) weight matrix applied to a hidden state."""
    weights = np.asarray(weights, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if weights.ndim != 2 or h.ndim != 1 or weights.shape[1] != h.shape[0]:
        raise ValidationError(f"shape mismatch: weights {weights.shape} vs hidden {h.shape}")
    return weights @ h


def mc_head_sample(
    weights: np.ndarray,
    h: np.ndarray,
    k: int,
    p_drop: float,
    rng_streams,
) -> HeadSampleSet:
    """Run K masked head passes; path i draws its mask from ``rng_streams[i]``.

    The result is a pure function of (weights, h, k, p_drop, stream keys):
    each path consumes only its own stream, so evaluation order cannot
    change the outcome. With ``p_drop == 0`` every path's logits are
    bit-identical to the deterministic head output.
    """
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    if not 0.0 <= p_drop < 1.0:
        raise ConfigError(f"p_drop must lie in [0, 1), got {p_drop}")
    if len(rng_streams) != k:
        raise ValidationError(f"expected {k} rng streams, got {len(rng_streams)}")
    h = np.asarray(h, dtype=np.float64)
    det_logits = head_forward(weights, h)
    deterministic = softmax(det_logits)

    if p_drop == 0.0:
        logits = np.tile(det_logits, (k, 1))
        dists = np.tile(deterministic, (k, 1))
    else:
        keep = 1.0 - p_drop
        bits = np.empty((k, h.shape[0]), dtype=np.float64)
        for i, rng in enumerate(rng_streams):
            bits[i] = rng.random(h.shape[0]) < keep
        masked = (h * bits) / keep
        logits = masked @ weights.T
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        dists = shifted / shifted.sum(axis=1, keepdims=True)

    return HeadSampleSet(
        logits=logits,
        dists=dists,
        argmax_tokens=np.argmax(dists, axis=1),
        deterministic_dist=deterministic,
        k=k,
        p_drop=p_drop,
    )

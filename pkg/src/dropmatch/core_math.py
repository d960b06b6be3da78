"""Shared numerical primitives: softmax, KL and JS divergence, logit averaging.

All functions take and return dense float64 numpy arrays and are pure, so
they are safe to call from any number of threads. Divergences are reported
in nats. numpy's pairwise reductions keep sums accurate at the tolerances
the test suite pins, including vocabularies up to 2**16.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

# Probabilities below this floor are clamped before appearing in a log
# denominator; softmax outputs are strictly positive, so the floor only
# matters for externally supplied distributions.
PROB_FLOOR = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stabilized softmax: shifts by the max logit before exponentiating.

    Preserves the argmax of the input and returns a vector summing to 1.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise ValidationError(f"softmax expects a vector of length >= 2, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("softmax input must be finite")
    z = np.exp(arr - arr.max())
    return z / z.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats; terms with p_i = 0 contribute exactly 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValidationError(f"length mismatch: {p.shape} vs {q.shape}")
    q_floored = np.maximum(q, PROB_FLOOR)
    support = p > 0.0
    terms = np.where(support, p * np.log(np.where(support, p, 1.0) / q_floored), 0.0)
    return float(terms.sum())


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence in nats: symmetric and bounded by ln 2."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValidationError(f"length mismatch: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m)


def mean_logits(logit_set) -> np.ndarray:
    """Elementwise arithmetic mean of K logit vectors."""
    if len(logit_set) == 0:
        raise ValidationError("mean_logits requires at least one vector")
    stacked = np.asarray(logit_set, dtype=np.float64)
    if stacked.ndim != 2:
        raise ValidationError("mean_logits expects vectors of equal length")
    return stacked.mean(axis=0)


def validate_prob_dist(p: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Check that ``p`` is a probability vector within ``tol`` of unit mass."""
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"probability vector expected, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("probability vector must be finite")
    if np.any(arr < 0.0):
        raise ValidationError("probability vector must be nonnegative")
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise ValidationError(f"probability vector sums to {total}, expected 1 within {tol}")
    return arr

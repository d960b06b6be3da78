"""Token-acceptance rules.

Four families: lossless rejection sampling (with its greedy exact-match
degenerate), naive token matching against any head, and the dropout-match
rule that accepts when the draft distribution lies within the spread of
the sampled head distributions (with a majority fallback for collapsed
heads). Decision functions are pure; ``lossless_accept`` consumes from a
caller-owned random stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core_math import PROB_FLOOR, mean_logits, softmax
from .errors import ValidationError
from .mc_head import HeadSampleSet
from .rng import sample_index


class Branch(str, Enum):
    """Which rule fired for a decision; REJECTED iff not accepted."""

    JS_PASS = "js_pass"
    MAJORITY_PASS = "majority_pass"
    NAIVE_PASS = "naive_pass"
    LOSSLESS_PASS = "lossless_pass"
    REJECTED = "rejected"


@dataclass(frozen=True)
class DraftToken:
    """A proposed token together with the draft model's full distribution."""

    token_id: int
    dist: np.ndarray


@dataclass(frozen=True)
class AcceptanceDecision:
    accepted: bool
    branch: Branch
    # Populated only when the JS criterion was evaluated.
    js_draft_to_centroid: float | None = None
    max_js_head_to_centroid: float | None = None


def centroid(samples: HeadSampleSet) -> np.ndarray:
    """Softmax of the mean head logits (mean in logit space, not probability space)."""
    return softmax(mean_logits(samples.logits))


def _js_to_ref(rows: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """JS divergence of each row against ``ref``, vectorized over rows."""
    m = 0.5 * (rows + ref)
    m_floored = np.maximum(m, PROB_FLOOR)
    row_support = rows > 0.0
    kl_rows = np.where(
        row_support, rows * np.log(np.where(row_support, rows, 1.0) / m_floored), 0.0
    ).sum(axis=1)
    ref_support = ref > 0.0
    kl_ref = np.where(
        ref_support, ref * np.log(np.where(ref_support, ref, 1.0) / m_floored), 0.0
    ).sum(axis=1)
    return 0.5 * kl_rows + 0.5 * kl_ref


def _js_scores(draft: DraftToken, samples: HeadSampleSet, c: np.ndarray) -> tuple[float, float]:
    """(JS(draft, centroid), max_i JS(head_i, centroid))."""
    vals = _js_to_ref(np.vstack([np.asarray(draft.dist, dtype=np.float64), samples.dists]), c)
    return float(vals[0]), float(vals[1:].max())


def js_criterion(draft: DraftToken, samples: HeadSampleSet, c: np.ndarray) -> bool:
    """True iff the draft's divergence to the centroid is within the head spread.

    The comparison is <=, so a draft coinciding with the farthest head is
    accepted.
    """
    js_draft, max_js = _js_scores(draft, samples, c)
    return js_draft <= max_js


def plurality_token(argmax_tokens: np.ndarray, strict: bool = False) -> int | None:
    """Unique plurality element of the head tokens, or None on a tie.

    With ``strict`` the winner must additionally hold more than half the
    heads.
    """
    values, counts = np.unique(np.asarray(argmax_tokens), return_counts=True)
    top = int(counts.max())
    if int((counts == top).sum()) != 1:
        return None
    if strict and 2 * top <= len(argmax_tokens):
        return None
    return int(values[int(counts.argmax())])


def majority_criterion(draft: DraftToken, samples: HeadSampleSet, strict: bool = False) -> bool:
    """True iff the draft token is the unique plurality head token (ties fail)."""
    return plurality_token(samples.argmax_tokens, strict=strict) == draft.token_id


def naive_match(draft: DraftToken, samples: HeadSampleSet) -> AcceptanceDecision:
    """Accept iff the draft token matches any head's argmax token."""
    accepted = int(draft.token_id) in samples.argmax_tokens
    return AcceptanceDecision(
        accepted=accepted, branch=Branch.NAIVE_PASS if accepted else Branch.REJECTED
    )


def dropmatch_accept(
    draft: DraftToken, samples: HeadSampleSet, strict_majority: bool = False
) -> AcceptanceDecision:
    """JS criterion first, majority fallback second, else reject.

    The decision records JS(draft, centroid) and the max head-to-centroid
    JS in every case; the majority rule is consulted only when the JS
    criterion fails.
    """
    c = centroid(samples)
    js_draft, max_js = _js_scores(draft, samples, c)
    if js_draft <= max_js:
        branch, accepted = Branch.JS_PASS, True
    elif majority_criterion(draft, samples, strict=strict_majority):
        branch, accepted = Branch.MAJORITY_PASS, True
    else:
        branch, accepted = Branch.REJECTED, False
    return AcceptanceDecision(
        accepted=accepted,
        branch=branch,
        js_draft_to_centroid=js_draft,
        max_js_head_to_centroid=max_js,
    )


def greedy_match_accept(draft: DraftToken, target_dist: np.ndarray) -> tuple[bool, int | None]:
    """Exact argmax matching: accept iff the target's argmax equals the draft token.

    Returns (accepted, replacement); the replacement is the target argmax
    on rejection, None on acceptance.
    """
    top = int(np.argmax(target_dist))
    if top == int(draft.token_id):
        return True, None
    return False, top


def lossless_accept(
    draft: DraftToken,
    target_dist: np.ndarray,
    rng: np.random.Generator,
    greedy: bool = False,
) -> tuple[bool, int | None]:
    """Rejection-sampling acceptance against the deterministic target distribution.

    Accept with probability min(1, p_target / p_draft) at the draft token;
    on rejection the replacement is drawn from the normalized positive part
    of (p_target - p_draft). A zero draft probability with positive target
    probability counts as certain acceptance. With ``greedy`` the rule
    degenerates to exact argmax matching.
    """
    target_dist = np.asarray(target_dist, dtype=np.float64)
    if target_dist.shape != np.shape(draft.dist):
        raise ValidationError(
            f"length mismatch: target {target_dist.shape} vs draft {np.shape(draft.dist)}"
        )
    if greedy:
        return greedy_match_accept(draft, target_dist)

    p_target = float(target_dist[draft.token_id])
    p_draft = float(draft.dist[draft.token_id])
    if p_draft <= 0.0:
        ratio = 1.0 if p_target > 0.0 else 0.0
    else:
        ratio = min(1.0, p_target / p_draft)
    if rng.random() < ratio:
        return True, None

    residual = np.maximum(target_dist - np.asarray(draft.dist, dtype=np.float64), 0.0)
    total = residual.sum()
    if total <= 0.0:
        # Distributions coincide numerically; fall back to the target itself.
        residual, total = target_dist, target_dist.sum()
    return False, sample_index(residual / total, rng)

"""Run statistics: acceptance length, head agreement, JS split, timing.

Aggregation is accumulator-based so independent decode streams can be
collected separately and merged afterwards; the merge is a plain sum of
counts and totals, hence associative and order-independent. The pure
functions mirror what the accumulator computes and are the reference
surface for tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .acceptance import AcceptanceDecision, Branch, centroid
from .acceptance import _js_to_ref
from .errors import ValidationError
from .mc_head import HeadSampleSet

# Partition labels for JS statistics: acceptances through the JS rule come
# from dispersed head samples, majority-fallback acceptances from
# concentrated ones.
DISPERSED = "dispersed"
CONCENTRATED = "concentrated"


def mean_acceptance_length(records) -> tuple[float, float]:
    """(tau including the bonus token, tau over draft tokens only)."""
    if not records:
        raise ValidationError("mean_acceptance_length requires at least one record")
    draft_only = float(np.mean([r.accepted_count for r in records]))
    return draft_only + 1.0, draft_only


def plurality_of(samples: HeadSampleSet) -> tuple[int, int]:
    """(plurality size, plurality token) of a head sample set.

    The size is the largest multiplicity among the head argmax tokens;
    when several tokens tie at that multiplicity, the one with the
    highest deterministic probability is reported.
    """
    values, counts = np.unique(samples.argmax_tokens, return_counts=True)
    top = int(counts.max())
    tied = values[counts == top]
    if len(tied) == 1:
        token = int(tied[0])
    else:
        token = int(tied[int(np.argmax(samples.deterministic_dist[tied]))])
    return top, token


def agreement_stats(sample_sets) -> tuple[list[int], list[float | None]]:
    """Histogram of plurality sizes 1..K and the conditional mean probability.

    The probability is the plurality token's mass under the deterministic
    (no-dropout) distribution, averaged within each plurality-size bucket;
    empty buckets report None.
    """
    sample_sets = list(sample_sets)
    if not sample_sets:
        return [], []
    k = sample_sets[0].k
    histogram = [0] * k
    prob_sums = [0.0] * k
    for samples in sample_sets:
        if samples.k != k:
            raise ValidationError(f"mixed head counts: {samples.k} vs {k}")
        size, token = plurality_of(samples)
        histogram[size - 1] += 1
        prob_sums[size - 1] += float(samples.deterministic_dist[token])
    means: list[float | None] = [
        prob_sums[i] / histogram[i] if histogram[i] else None for i in range(k)
    ]
    return histogram, means


def mean_head_js(samples: HeadSampleSet) -> float:
    """Mean JS divergence between the centroid and the K head distributions."""
    c = centroid(samples)
    return float(_js_to_ref(samples.dists, c).mean())


def js_stats(decisions, sample_sets) -> dict:
    """Mean centroid-to-draft and centroid-to-head JS, split by acceptance branch.

    ``decisions`` and ``sample_sets`` are aligned. Only accepted decisions
    that carry JS scalars contribute; partitions with no members are
    reported as None.
    """
    sums = {DISPERSED: [0.0, 0.0, 0], CONCENTRATED: [0.0, 0.0, 0]}
    for decision, samples in zip(decisions, sample_sets):
        part = _js_partition(decision)
        if part is None:
            continue
        bucket = sums[part]
        bucket[0] += decision.js_draft_to_centroid
        bucket[1] += mean_head_js(samples)
        bucket[2] += 1
    return {
        part: (
            {
                "mean_js_centroid_draft": bucket[0] / bucket[2],
                "mean_js_centroid_heads": bucket[1] / bucket[2],
            }
            if bucket[2]
            else None
        )
        for part, bucket in sums.items()
    }


def _js_partition(decision: AcceptanceDecision) -> str | None:
    if not decision.accepted or decision.js_draft_to_centroid is None:
        return None
    if decision.branch == Branch.JS_PASS:
        return DISPERSED
    if decision.branch == Branch.MAJORITY_PASS:
        return CONCENTRATED
    return None


def overhead_report(records, baseline_records=None) -> dict:
    """Head-time share of total wall time, optionally against a baseline run.

    The head fraction is the summed head time over the summed step time
    (0.0 when nothing was timed). With ``baseline_records`` the report
    also carries the baseline fraction and the delta against it.
    """
    fraction = _head_fraction(records)
    report = {
        "head_time_fraction": fraction,
        "baseline_head_time_fraction": None,
        "head_time_fraction_delta": None,
    }
    if baseline_records is not None:
        base = _head_fraction(baseline_records)
        report["baseline_head_time_fraction"] = base
        report["head_time_fraction_delta"] = fraction - base
    return report


def _head_fraction(records) -> float:
    total = sum(r.wall_time_total for r in records)
    head = sum(r.wall_time_head for r in records)
    return head / total if total > 0 else 0.0


@dataclass(frozen=True)
class RunSummary:
    """Aggregate statistics of one run (or several merged streams)."""

    tau_with_bonus: float
    tau_draft_only: float
    steps: int
    tokens_emitted: int
    tokens_per_second: float
    head_time_fraction: float
    agreement_histogram: list[int]
    mean_prob_by_agreement: list[float | None]
    js_stats: dict

    def unanimity_ratio(self) -> float:
        total = sum(self.agreement_histogram)
        if total == 0:
            return float("nan")
        return self.agreement_histogram[-1] / total

    def to_dict(self) -> dict:
        return {
            "tau_with_bonus": self.tau_with_bonus,
            "tau_draft_only": self.tau_draft_only,
            "steps": self.steps,
            "tokens_emitted": self.tokens_emitted,
            "tokens_per_second": self.tokens_per_second,
            "head_time_fraction": self.head_time_fraction,
            "agreement_histogram": self.agreement_histogram,
            "mean_prob_by_agreement": self.mean_prob_by_agreement,
            "js_stats": self.js_stats,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class RunAccumulator:
    """Streaming collector for decode statistics.

    Use ``position_sink`` as the decode sink to gather per-position head
    statistics, then ``add_run`` once per decode. Accumulators for
    independent streams can be merged; merging sums counts, so the result
    does not depend on merge order.
    """

    wants_hidden = False  # positions are summarized eagerly; skip hidden states

    def __init__(self, k: int):
        self.k = int(k)
        self._accepted_sum = 0
        self._steps = 0
        self._tokens = 0
        self._elapsed_ns = 0
        self._head_ns = 0
        self._total_ns = 0
        self._histogram = [0] * self.k
        self._prob_sums = [0.0] * self.k
        self._js_sums = {DISPERSED: [0.0, 0.0, 0], CONCENTRATED: [0.0, 0.0, 0]}

    def position_sink(self, position, hidden, draft, samples, decision) -> None:
        if samples is None:
            return
        size, token = plurality_of(samples)
        self._histogram[size - 1] += 1
        self._prob_sums[size - 1] += float(samples.deterministic_dist[token])
        part = _js_partition(decision)
        if part is not None:
            bucket = self._js_sums[part]
            bucket[0] += decision.js_draft_to_centroid
            bucket[1] += mean_head_js(samples)
            bucket[2] += 1

    def add_run(self, records, tokens_emitted: int, elapsed_ns: int) -> None:
        self._accepted_sum += sum(r.accepted_count for r in records)
        self._steps += len(records)
        self._tokens += int(tokens_emitted)
        self._elapsed_ns += int(elapsed_ns)
        self._head_ns += sum(r.wall_time_head for r in records)
        self._total_ns += sum(r.wall_time_total for r in records)

    def merge(self, other: "RunAccumulator") -> None:
        if other.k != self.k:
            raise ValidationError(f"cannot merge accumulators with K={other.k} into K={self.k}")
        self._accepted_sum += other._accepted_sum
        self._steps += other._steps
        self._tokens += other._tokens
        self._elapsed_ns += other._elapsed_ns
        self._head_ns += other._head_ns
        self._total_ns += other._total_ns
        for i in range(self.k):
            self._histogram[i] += other._histogram[i]
            self._prob_sums[i] += other._prob_sums[i]
        for part in self._js_sums:
            for j in range(3):
                self._js_sums[part][j] += other._js_sums[part][j]

    def summary(self, measure_timing: bool = False) -> RunSummary:
        if self._steps == 0:
            raise ValidationError("no steps accumulated")
        tau_draft = self._accepted_sum / self._steps
        if measure_timing:
            tps = self._tokens / (self._elapsed_ns / 1e9) if self._elapsed_ns > 0 else 0.0
            head_fraction = self._head_ns / self._total_ns if self._total_ns > 0 else 0.0
        else:
            tps = 0.0
            head_fraction = 0.0
        return RunSummary(
            tau_with_bonus=tau_draft + 1.0,
            tau_draft_only=tau_draft,
            steps=self._steps,
            tokens_emitted=self._tokens,
            tokens_per_second=tps,
            head_time_fraction=head_fraction,
            agreement_histogram=list(self._histogram),
            mean_prob_by_agreement=[
                self._prob_sums[i] / self._histogram[i] if self._histogram[i] else None
                for i in range(self.k)
            ],
            js_stats={
                part: (
                    {
                        "mean_js_centroid_draft": bucket[0] / bucket[2],
                        "mean_js_centroid_heads": bucket[1] / bucket[2],
                    }
                    if bucket[2]
                    else None
                )
                for part, bucket in self._js_sums.items()
            },
        )

"""Command-line interface: single runs, benchmark sweeps, trace replay.

Standard output carries only machine-readable results (JSON summaries);
progress goes to standard error. Exit codes: 0 success, 2 config error,
3 I/O error, 4 validation error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import rng as rnglib
from .acceptance import AcceptanceDecision, Branch, DraftToken, dropmatch_accept, lossless_accept, naive_match
from .config import RunConfig, SweepSpec, load_json, parse_run_config, parse_sweep
from .core_math import softmax
from .engine import Criterion, EngineConfig, Mode, StepRecord, decode
from .errors import ConfigError, ValidationError
from .metrics import RunAccumulator, RunSummary
from .mc_head import mc_head_sample
from .models import load_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VALIDATION = 4

CSV_COLUMNS = [
    "criterion",
    "p_drop",
    "K",
    "L",
    "epsilon",
    "seed",
    "steps",
    "tau_draft_only",
    "tau_with_bonus",
    "tokens_emitted",
    "tokens_per_second",
    "head_time_fraction",
    "unanimity_ratio",
]


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def run_single(cfg: RunConfig) -> RunSummary:
    """Execute one decode described by a run config and summarize it."""
    if cfg.draft is None:
        raise ConfigError("missing required key draft")
    if cfg.prompt is None:
        raise ConfigError("missing required key prompt")
    target = cfg.model.build()
    draft = cfg.draft.build(target)
    acc = RunAccumulator(cfg.engine.K)
    start = time.perf_counter_ns()
    tokens, records = decode(draft, target, cfg.prompt, cfg.engine, sink=acc.position_sink)
    elapsed = time.perf_counter_ns() - start
    acc.add_run(records, tokens_emitted=len(tokens), elapsed_ns=elapsed)
    return acc.summary(measure_timing=cfg.engine.measure_timing)


def cmd_run(config_path, seed_override, out) -> int:
    cfg = parse_run_config(load_json(config_path), seed_override=seed_override)
    summary = run_single(cfg)
    out.write(summary.to_json() + "\n")
    return EXIT_OK


def _bench_cell(spec: SweepSpec, cell) -> dict:
    index, criterion, p_drop, k, length, epsilon, _rep = cell
    cell_seed = spec.base_seed + index
    target = spec.model.build()
    draft = NeuralLM(make_draft_of(target.params, epsilon, spec.draft_seed))
    acc = RunAccumulator(k)
    for j, prompt in enumerate(spec.prompts):
        engine_cfg = EngineConfig(
            criterion=criterion,
            L=length,
            K=k,
            p_drop=p_drop,
            seed=rnglib.derive_seed(cell_seed, j),
            max_tokens=spec.max_tokens,
            mode=spec.mode,
            rejection_replacement=spec.rejection_replacement,
            strict_majority=spec.strict_majority,
            eos_token=spec.eos_token,
            measure_timing=spec.measure_timing,
        )
        start = time.perf_counter_ns()
        tokens, records = decode(draft, target, prompt, engine_cfg, sink=acc.position_sink)
        elapsed = time.perf_counter_ns() - start
        acc.add_run(records, tokens_emitted=len(tokens), elapsed_ns=elapsed)
    summary = acc.summary(measure_timing=spec.measure_timing)
    return {
        "criterion": criterion.value,
        "p_drop": repr(float(p_drop)),
        "K": k,
        "L": length,
        "epsilon": repr(float(epsilon)),
        "seed": cell_seed,
        "steps": summary.steps,
        "tau_draft_only": repr(summary.tau_draft_only),
        "tau_with_bonus": repr(summary.tau_with_bonus),
        "tokens_emitted": summary.tokens_emitted,
        "tokens_per_second": repr(summary.tokens_per_second),
        "head_time_fraction": repr(summary.head_time_fraction),
        "unanimity_ratio": repr(summary.unanimity_ratio()),
    }


def cmd_bench(sweep_path, out_path, seed_override, threads) -> int:
    spec = parse_sweep(load_json(sweep_path), seed_override=seed_override)
    cells = list(spec.cells())
    _log(f"bench: {len(cells)} cells, {threads} thread(s)")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda c: _bench_cell(spec, c), cells))
    else:
        rows = [_bench_cell(spec, c) for c in cells]
    try:
        fh = open(out_path, "w", newline="", encoding="utf-8")
    except OSError:
        raise
    with fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    _log(f"bench: wrote {len(rows)} rows to {out_path}")
    return EXIT_OK


def replay_trace(trace_path, cfg: RunConfig) -> RunSummary:
    """Replay logged hidden states through the sampled head and acceptance.

    Each record is treated as an independent single-position verification
    step keyed by its recorded step index, so a replay with the seed of
    the live run reproduces the live decisions. No model forward runs;
    only the head is evaluated.
    """
    trace = load_trace(trace_path)
    if not trace.records:
        raise ValidationError(f"{trace_path}: trace has no steps")
    if trace.d != cfg.model.hidden_dim or trace.v != cfg.model.vocab_size:
        raise ValidationError(
            f"trace header (d={trace.d}, v={trace.v}) does not match model "
            f"(hidden_dim={cfg.model.hidden_dim}, vocab_size={cfg.model.vocab_size})"
        )
    engine_cfg = cfg.engine
    engine_cfg.validate()
    target = cfg.model.build()
    weights = target.head_weights
    acc = RunAccumulator(engine_cfg.K)
    records = []
    start = time.perf_counter_ns()
    for rec in trace.records:
        draft = DraftToken(token_id=rec.draft_token, dist=rec.draft_probs)
        t0 = time.perf_counter_ns()
        samples = None
        if engine_cfg.criterion in (Criterion.DROPMATCH_JS, Criterion.NAIVE):
            streams = [
                rnglib.stream(engine_cfg.seed, rnglib.MASK, rec.step, i)
                for i in range(engine_cfg.K)
            ]
            t_head = time.perf_counter_ns()
            samples = mc_head_sample(weights, rec.hidden, engine_cfg.K, engine_cfg.p_drop, streams)
            if engine_cfg.criterion == Criterion.DROPMATCH_JS:
                decision = dropmatch_accept(draft, samples, strict_majority=engine_cfg.strict_majority)
            else:
                decision = naive_match(draft, samples)
            head_ns = time.perf_counter_ns() - t_head
            bonus = int(np.argmax(samples.deterministic_dist))
        else:
            target_dist = softmax(weights @ rec.hidden)
            greedy = engine_cfg.criterion == Criterion.GREEDY_MATCH or engine_cfg.mode == Mode.GREEDY
            acc_rng = rnglib.stream(engine_cfg.seed, rnglib.LOSSLESS, rec.step)
            ok, replacement = lossless_accept(draft, target_dist, acc_rng, greedy=greedy)
            decision = AcceptanceDecision(
                accepted=ok, branch=Branch.LOSSLESS_PASS if ok else Branch.REJECTED
            )
            head_ns = 0
            bonus = int(np.argmax(target_dist)) if replacement is None else int(replacement)
        acc.position_sink(rec.step, None, draft, samples, decision)
        accepted = 1 if decision.accepted else 0
        records.append(
            StepRecord(
                proposed=[draft],
                accepted_count=accepted,
                bonus_token=bonus,
                decisions=[decision],
                wall_time_total=time.perf_counter_ns() - t0,
                wall_time_head=head_ns,
            )
        )
    elapsed = time.perf_counter_ns() - start
    acc.add_run(
        records,
        tokens_emitted=sum(r.accepted_count + 1 for r in records),
        elapsed_ns=elapsed,
    )
    return acc.summary(measure_timing=engine_cfg.measure_timing)


def cmd_trace(trace_path, config_path, seed_override, out) -> int:
    cfg = parse_run_config(load_json(config_path), seed_override=seed_override)
    summary = replay_trace(trace_path, cfg)
    out.write(summary.to_json() + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dropmatch",
        description="Speculative-decoding benchmark harness with dropout-sampled acceptance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one decode and print its JSON summary")
    p_run.add_argument("--config", required=True, help="run config (JSON)")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--threads", type=int, default=1, help="accepted for symmetry; a single decode is sequential")

    p_bench = sub.add_parser("bench", help="run a sweep and write one CSV row per cell")
    p_bench.add_argument("--sweep", required=True, help="sweep spec (JSON)")
    p_bench.add_argument("--out", required=True, help="output CSV path")
    p_bench.add_argument("--seed", type=int, default=None, help="override the sweep base seed")
    p_bench.add_argument("--threads", type=int, default=1, help="parallel sweep cells")

    p_trace = sub.add_parser("trace", help="replay a recorded trace through the acceptance kernel")
    p_trace.add_argument("trace", help="trace file (JSONL)")
    p_trace.add_argument("--config", required=True, help="replay config (JSON)")
    p_trace.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_trace.add_argument("--threads", type=int, default=1, help="accepted for symmetry; replay is sequential")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.seed, sys.stdout)
        if args.command == "bench":
            if args.threads < 1:
                raise ConfigError(f"threads must be >= 1, got {args.threads}")
            return cmd_bench(args.sweep, args.out, args.seed, args.threads)
        if args.command == "trace":
            return cmd_trace(args.trace, args.config, args.seed, sys.stdout)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_CONFIG
    except ValidationError as exc:
        _log(f"validation error: {exc}")
        return EXIT_VALIDATION
    except OSError as exc:
        _log(f"i/o error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())

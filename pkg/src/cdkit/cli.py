"""Command-line front end.

Subcommands: decode, rank, selfcons, gen-data, analyze, flops,
train-scorer, run, combine.  All of them accept --seed, --config,
--output, and --json (machine-readable output).

Exit codes: 0 success; 1 usage or configuration problem; 2 bad or missing
data (files, adapter protocol, degenerate scorers); 3 internal invariant
violation.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from ._version import __version__
from .aggregation import AnswerPattern, extract_answer, self_consistency
from .analysis import (
    copy_metrics,
    cost_curve,
    flop_overhead,
    generation_stats,
    write_cost_csv,
)
from .core import CdConfig, combine_original, combine_refactored, LogitVector
from .datasets import (
    CorpusSpec,
    arithmetic_vocabulary,
    build_training_corpus,
    gen_arithmetic,
    gen_template_text,
    save_problems,
)
from .decoding import (
    CdGreedy,
    CdSample,
    DecodeRequest,
    FailedGeneration,
    GenerationRecord,
    Greedy,
    Nucleus,
    Sample,
    Strategy,
    TopK,
    decode,
)
from .errors import (
    ConfigurationError,
    DataError,
    DegenerateScorerError,
    InternalInvariantError,
    MetricError,
    ScorerCompatibilityError,
    ScorerProtocolError,
    UsageError,
    ValidationError,
)
from .external import ExternalScorer
from .harness import build_scorers, load_config, run_experiment
from .ranking import load_choice_tasks, rank_tasks
from .scorers import Scorer, TokenSequence, Vocabulary, load_ngram, save_ngram, train_ngram, with_prefix

RECORDS_FORMAT_VERSION = 1

_USAGE_ERRORS = (UsageError, ConfigurationError, ValidationError, ScorerCompatibilityError, MetricError)
_DATA_ERRORS = (DataError, ScorerProtocolError, DegenerateScorerError)


class _Parser(argparse.ArgumentParser):
    """argparse parser that reports usage problems via exit code 1."""

    def error(self, message):
        raise UsageError(message)


def _emit(args, payload: dict, human: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human)


def _scorer_pair(args) -> tuple[Vocabulary, Scorer, Scorer | None]:
    """Build scorers from --config or from the per-command scorer flags."""
    if args.config:
        vocab, expert, amateur = build_scorers(load_config(args.config))
        return vocab, expert, amateur
    vocab = arithmetic_vocabulary()
    if getattr(args, "expert", None):
        expert = load_ngram(args.expert)
        vocab = expert.vocabulary
    elif getattr(args, "expert_cmd", None):
        expert = ExternalScorer(args.expert_cmd, vocab)
    else:
        raise UsageError("provide --expert, --expert-cmd, or --config")
    amateur = None
    if getattr(args, "amateur", None):
        amateur = load_ngram(args.amateur)
    elif getattr(args, "amateur_cmd", None):
        amateur = ExternalScorer(args.amateur_cmd, vocab)
    if getattr(args, "negative_prefix", None) is not None:
        base = amateur if amateur is not None else expert
        amateur = with_prefix(base, vocab.encode_chars(args.negative_prefix, add_bos=False))
    return vocab, expert, amateur


def _cd_config(args) -> CdConfig:
    return CdConfig(
        alpha=args.alpha,
        beta=args.beta,
        output_temp=args.temperature,
        formulation=args.formulation,
    )


def _strategy(args) -> Strategy:
    name = args.strategy
    if name == "greedy":
        return Greedy()
    if name == "sample":
        return Sample(temperature=args.temperature)
    if name == "top_k":
        return TopK(k=args.k, temperature=args.temperature)
    if name == "nucleus":
        return Nucleus(p=args.p, temperature=args.temperature)
    if name == "cd_greedy":
        return CdGreedy(cfg=_cd_config(args))
    if name == "mask_only":
        return CdSample(cfg=replace(_cd_config(args), beta=0.0))
    return CdSample(cfg=_cd_config(args), remask=not args.no_remask)


def _default_stop(vocab: Vocabulary) -> frozenset[int]:
    stop = {vocab.eos_id}
    try:
        stop.add(vocab.token_to_id("\n"))
    except ValidationError:
        pass
    return frozenset(stop)


def _record_row(record: GenerationRecord, vocab: Vocabulary) -> dict:
    return {
        "schema_version": RECORDS_FORMAT_VERSION,
        "vocab_id": vocab.id,
        "prompt": list(record.request.prompt.ids),
        "continuation": list(record.continuation.ids),
        "text": vocab.decode(record.continuation.ids),
        "per_step": [list(step) for step in record.per_step],
        "finish_reason": record.finish_reason,
        "seed": record.request.seed,
    }


def _cmd_decode(args) -> int:
    vocab, expert, amateur = _scorer_pair(args)
    strategy = _strategy(args)
    if isinstance(strategy, (CdGreedy, CdSample)) and amateur is None:
        raise UsageError(f"strategy {args.strategy} needs an amateur scorer")
    stop = None if args.no_stop else _default_stop(vocab)
    request = DecodeRequest(
        prompt=vocab.encode_chars(args.prompt, add_bos=True),
        max_new_tokens=args.max_new_tokens,
        strategy=strategy,
        seed=args.seed,
        stop=stop,
    )
    record = decode(expert, request, amateur)
    row = _record_row(record, vocab)
    if args.output:
        with open(args.output, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    _emit(args, row, f"{row['text']!r}  [{record.finish_reason}, {len(record.continuation)} tokens]")
    return 0


def _finite_or_none(value: float) -> float | None:
    """Strict-JSON stand-in: masked-out scores and empty accuracies become null."""
    return value if math.isfinite(value) else None


def _cmd_rank(args) -> int:
    _, expert, amateur = _scorer_pair(args)
    if amateur is None:
        raise UsageError("rank needs an amateur scorer (--amateur, --amateur-cmd, or --negative-prefix)")
    tasks = load_choice_tasks(args.tasks)
    results, accuracy = rank_tasks(
        expert, amateur, tasks, _cd_config(args), norm=args.norm, apply_mask=not args.no_mask
    )
    rows = [
        {
            "top_index": result.ranked[0].index,
            "correct": result.correct,
            "scores": [
                {
                    "index": c.index,
                    "raw": _finite_or_none(c.raw_score),
                    "normalized": _finite_or_none(c.normalized_score),
                }
                for c in result.ranked
            ],
        }
        for result in results
    ]
    payload = {"accuracy": _finite_or_none(accuracy), "tasks": rows}
    if args.output:
        with open(args.output, "w", encoding="utf-8") as handle:
            for row in rows:
                handle.write(json.dumps(row, sort_keys=True) + "\n")
    _emit(args, payload, f"accuracy {accuracy:.4f} over {len(results)} tasks")
    return 0


def _cmd_selfcons(args) -> int:
    vocab, expert, amateur = _scorer_pair(args)
    strategy = _strategy(args)
    if isinstance(strategy, (CdGreedy, CdSample)) and amateur is None:
        raise UsageError(f"strategy {args.strategy} needs an amateur scorer")
    pattern = AnswerPattern(kind=args.pattern, marker=args.marker)
    result = self_consistency(
        expert=expert,
        prompt=vocab.encode_chars(args.prompt, add_bos=True),
        k=args.k,
        strategy=strategy,
        seed=args.seed,
        pattern=pattern,
        amateur=amateur,
        max_new_tokens=args.max_new_tokens,
        stop=None if args.no_stop else _default_stop(vocab),
    )
    payload = {
        "winner": result.vote.winner,
        "counts": result.vote.counts,
        "k": result.vote.k,
        "valid_paths": result.vote.valid_paths,
        "answers": [a.canonical for a in result.answers],
    }
    if args.output:
        Path(args.output).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    _emit(
        args, payload,
        f"winner {result.vote.winner!r} with {result.vote.counts.get(result.vote.winner, 0)}/{args.k} "
        f"({result.vote.valid_paths} parseable paths)",
    )
    return 0


def _cmd_gen_data(args) -> int:
    if not args.output:
        raise UsageError("gen-data requires --output")
    spec = CorpusSpec(
        generator=args.generator, size=args.size, seed=args.seed, corruption=args.corruption
    )
    if args.generator == "arithmetic":
        problems = gen_arithmetic(spec)
        save_problems(problems, args.output)
        count = len(problems)
    else:
        lines = gen_template_text(spec)
        with open(args.output, "w", encoding="utf-8") as handle:
            for line in lines:
                handle.write(json.dumps({"schema_version": 1, "text": line}) + "\n")
        count = len(lines)
    _emit(args, {"written": count, "output": args.output}, f"wrote {count} examples to {args.output}")
    return 0


def _load_record_rows(path: str) -> list[dict]:
    source = Path(path)
    if not source.exists():
        raise DataError(f"records file not found: {path}")
    rows = []
    for lineno, line in enumerate(source.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        if row.get("schema_version") != RECORDS_FORMAT_VERSION:
            raise DataError(f"{path}:{lineno}: unsupported record schema version")
        rows.append(row)
    if not rows:
        raise DataError(f"records file contains no records: {path}")
    return rows


def _cmd_analyze(args) -> int:
    rows = _load_record_rows(args.records)
    if args.scorer:
        vocab = load_ngram(args.scorer).vocabulary
    else:
        vocab = arithmetic_vocabulary()
    skipped = 0
    reports = []
    records = []
    for row in rows:
        prompt = TokenSequence(vocab.id, tuple(row["prompt"]))
        continuation = TokenSequence(vocab.id, tuple(row["continuation"]))
        try:
            reports.append(copy_metrics(prompt, continuation, args.n, multiset=args.multiset))
        except MetricError:
            skipped += 1
        request = DecodeRequest(
            prompt=prompt,
            max_new_tokens=max(len(continuation.ids), 1),
            strategy=Greedy(),
            diagnostics_cap=0,
        )
        records.append(GenerationRecord(
            request=request,
            continuation=continuation,
            per_step=(),
            finish_reason=row.get("finish_reason", "length"),
        ))
    payload: dict = {
        "n": args.n,
        "records": len(rows),
        "skipped_too_short": skipped,
    }
    if reports:
        payload["copy"] = {
            "mean_precision": sum(r.precision for r in reports) / len(reports),
            "mean_recall": sum(r.recall for r in reports) / len(reports),
            "mean_f1": sum(r.f1 for r in reports) / len(reports),
        }
    if args.golds:
        golds = [
            line for line in Path(args.golds).read_text(encoding="utf-8").splitlines() if line.strip()
        ]
        stats = generation_stats(
            records, vocab, AnswerPattern(kind=args.pattern, marker=args.marker), golds
        )
        payload["stats"] = stats.as_dict()
    if args.output:
        Path(args.output).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    summary = f"{len(rows)} records; skipped {skipped}"
    if reports:
        copy = payload["copy"]
        summary += (
            f"; copy p/r/f1 = {copy['mean_precision']:.4f}/"
            f"{copy['mean_recall']:.4f}/{copy['mean_f1']:.4f}"
        )
    if "stats" in payload:
        stats = payload["stats"]
        summary += (
            f"; correct {stats['correct_fraction']:.4f}, parseable {stats['parseable_fraction']:.4f}, "
            f"mean chars {stats['mean_chars']:.1f}"
        )
    _emit(args, payload, summary)
    return 0


def _cmd_flops(args) -> int:
    report = flop_overhead(args.expert, args.amateur, args.length_ratio)
    payload = report.as_dict()
    human = (
        f"per-token overhead: {report.per_token_overhead * 100:.2f}%\n"
        f"total overhead: {report.total_overhead * 100:.2f}%"
    )
    if args.k_grid:
        ks = [int(part) for part in args.k_grid.split(",") if part]
        points = cost_curve(ks, report)
        payload["curve"] = [
            {"k": p.k, "method": p.method, "relative_flops": p.relative_flops} for p in points
        ]
        if args.output:
            write_cost_csv(points, args.output)
    elif args.output:
        Path(args.output).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    _emit(args, payload, human)
    return 0


def _cmd_train_scorer(args) -> int:
    if not args.output:
        raise UsageError("train-scorer requires --output")
    vocab = arithmetic_vocabulary()
    spec = CorpusSpec(
        generator=args.generator, size=args.size, seed=args.seed, corruption=args.corruption
    )
    corpus = build_training_corpus(spec, vocab)
    scorer = train_ngram(corpus, vocab, order=args.order, smoothing_k=args.smoothing_k)
    save_ngram(scorer, args.output)
    payload = {
        "output": args.output,
        "order": args.order,
        "smoothing_k": args.smoothing_k,
        "sequences": len(corpus),
    }
    _emit(args, payload, f"trained order-{args.order} scorer on {len(corpus)} sequences -> {args.output}")
    return 0


def _cmd_run(args) -> int:
    if not args.config:
        raise UsageError("run requires --config")
    rows = run_experiment(args.config, jobs=args.jobs, output=args.output)
    ok = sum(1 for row in rows if row["status"] == "ok")
    failed_cells = {
        (row["method"], row["beta"], row["k"]) for row in rows if row["status"] == "failed"
    }
    payload = {"rows": len(rows), "ok_rows": ok, "failed_cells": len(failed_cells)}
    _emit(args, payload, f"wrote {len(rows)} rows ({len(failed_cells)} failed cells)")
    return 0


def _cmd_combine(args) -> int:
    if args.input and args.input != "-":
        text = Path(args.input).read_text(encoding="utf-8")
    else:
        text = sys.stdin.read()
    try:
        request = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"combine input is not valid JSON: {exc}") from exc
    if not isinstance(request, dict):
        raise DataError("combine input must be a JSON object")
    for key in ("expert", "amateur"):
        if not isinstance(request.get(key), list):
            raise DataError(f"combine input needs a numeric array field {key!r}")
    alpha = args.alpha if args.alpha is not None else request.get("alpha", 0.1)
    beta = args.beta if args.beta is not None else request.get("beta", 0.5)
    if len(request["expert"]) != len(request["amateur"]):
        raise UsageError(
            f"expert and amateur arrays differ in length: "
            f"{len(request['expert'])} vs {len(request['amateur'])}"
        )
    cfg = CdConfig(
        alpha=float(alpha),
        beta=float(beta),
        amateur_temp=float(request.get("amateur_temp", 1.0)),
        formulation=str(request.get("formulation", "refactored")),
    )
    expert = LogitVector(request["expert"])
    amateur = LogitVector(request["amateur"])
    if cfg.formulation == "original":
        combined = combine_original(expert, amateur, cfg.amateur_temp, cfg.alpha)
    else:
        combined = combine_refactored(expert, amateur, cfg)
    values = combined.materialize()
    cd = [None if v == float("-inf") else float(v) for v in values]
    payload = {"schema_version": 1, "engine_version": __version__, "cd": cd}
    out = json.dumps(payload, sort_keys=True)
    if args.output:
        Path(args.output).write_text(out + "\n", encoding="utf-8")
    print(out)
    return 0


def _add_scorer_flags(parser) -> None:
    parser.add_argument("--expert", help="path to a saved n-gram scorer used as the expert")
    parser.add_argument("--expert-cmd", help="adapter command for an external expert scorer")
    parser.add_argument("--amateur", help="path to a saved n-gram scorer used as the amateur")
    parser.add_argument("--amateur-cmd", help="adapter command for an external amateur scorer")
    parser.add_argument(
        "--negative-prefix",
        help="prefix text; wraps the amateur (or the expert when no amateur is given)",
    )


def _add_cd_flags(parser) -> None:
    parser.add_argument("--alpha", type=float, default=0.1, help="mask threshold in (0, 1]")
    parser.add_argument("--beta", type=float, default=0.5, help="contrast strength >= 0")
    parser.add_argument("--temperature", type=float, default=1.0, help="sampling temperature")
    parser.add_argument(
        "--formulation", choices=("refactored", "original"), default="refactored"
    )


def _add_strategy_flags(parser) -> None:
    parser.add_argument(
        "--strategy",
        choices=("greedy", "sample", "top_k", "nucleus", "cd_greedy", "cd_sample", "mask_only"),
        default="greedy",
    )
    parser.add_argument("--k", type=int, default=1, help="k for top_k (decode) / paths (selfcons)")
    parser.add_argument("--p", type=float, default=0.9, help="cumulative mass for nucleus")
    parser.add_argument("--no-remask", action="store_true", help="cd_sample without per-step mask")
    parser.add_argument("--max-new-tokens", type=int, default=64)
    parser.add_argument("--no-stop", action="store_true", help="ignore stop tokens; run to length")


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (64-bit unsigned)")
    common.add_argument("--config", help="experiment config JSON (supplies scorers and defaults)")
    common.add_argument("--output", help="write results to this path")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")

    # Common flags live on the subparsers only: with parents on the root as
    # well, subparser defaults would clobber values parsed before the
    # subcommand name.
    parser = _Parser(prog="cdkit", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decode", parents=[common], help="generate one continuation")
    _add_scorer_flags(p)
    _add_cd_flags(p)
    _add_strategy_flags(p)
    p.add_argument("--prompt", required=True, help="prompt text, encoded character-level")
    p.set_defaults(handler=_cmd_decode)

    p = sub.add_parser("rank", parents=[common], help="score multiple-choice task files")
    _add_scorer_flags(p)
    _add_cd_flags(p)
    p.add_argument("--tasks", required=True, help="JSONL task file")
    p.add_argument("--norm", choices=("characters", "tokens", "none"), default="characters")
    p.add_argument("--no-mask", action="store_true", help="score without the alpha-mask")
    p.set_defaults(handler=_cmd_rank)

    p = sub.add_parser("selfcons", parents=[common], help="maj@k over sampled paths")
    _add_scorer_flags(p)
    _add_cd_flags(p)
    _add_strategy_flags(p)
    p.add_argument("--prompt", required=True)
    p.add_argument("--pattern", choices=("last-number", "after-marker"), default="last-number")
    p.add_argument("--marker", help="marker string for after-marker")
    p.set_defaults(handler=_cmd_selfcons)

    p = sub.add_parser("gen-data", parents=[common], help="emit a deterministic dataset")
    p.add_argument("--generator", choices=("arithmetic", "template-text"), default="arithmetic")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--corruption", type=float, default=0.0)
    p.set_defaults(handler=_cmd_gen_data)

    p = sub.add_parser("analyze", parents=[common], help="copy metrics and stats over records")
    p.add_argument("--records", required=True, help="JSONL written by decode --output")
    p.add_argument("--n", type=int, default=2, help="n-gram order for copy metrics")
    p.add_argument("--multiset", action="store_true", help="clipped-count overlap instead of sets")
    p.add_argument("--golds", help="file with one gold answer per line")
    p.add_argument("--pattern", choices=("last-number", "after-marker"), default="last-number")
    p.add_argument("--marker")
    p.add_argument("--scorer", help="saved scorer supplying the vocabulary (default arithmetic)")
    p.set_defaults(handler=_cmd_analyze)

    p = sub.add_parser("flops", parents=[common], help="overhead model from parameter counts")
    p.add_argument("--expert", type=float, required=True, help="expert size in billions")
    p.add_argument("--amateur", type=float, required=True, help="amateur size in billions")
    p.add_argument("--length-ratio", type=float, default=1.0)
    p.add_argument("--k-grid", help="comma-separated k values; with --output writes a CSV curve")
    p.set_defaults(handler=_cmd_flops)

    p = sub.add_parser("train-scorer", parents=[common], help="train and save an n-gram scorer")
    p.add_argument("--generator", choices=("arithmetic", "template-text"), default="arithmetic")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--corruption", type=float, default=0.0)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--smoothing-k", type=float, default=0.1)
    p.set_defaults(handler=_cmd_train_scorer)

    p = sub.add_parser("run", parents=[common], help="run an experiment grid from a config")
    p.add_argument("--jobs", type=int, default=1, help="concurrent grid cells")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("combine", parents=[common], help="combined CD logits for one step (JSON)")
    p.add_argument("--input", help="JSON file with expert/amateur arrays; - or absent reads stdin")
    # No defaults here: combine takes alpha/beta from its input payload
    # unless the flags override them.
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.set_defaults(handler=_cmd_combine)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not (0 <= args.seed < 2 ** 64):
            raise UsageError("--seed must be a 64-bit unsigned integer")
        return args.handler(args)
    except SystemExit as exc:  # argparse --help / --version
        code = exc.code
        return int(code) if code is not None else 0
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InternalInvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

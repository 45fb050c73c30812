"""Post-hoc analytics: prompt-copy overlap, generation stats, and FLOP accounting."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .aggregation import AnswerPattern, canonical_number, extract_answer, _NUMBER_RE
from .decoding import FailedGeneration, GenerationRecord
from .errors import ConfigurationError, MetricError, UsageError
from .scorers import TokenSequence, Vocabulary


@dataclass(frozen=True)
class CopyReport:
    n: int
    precision: float
    recall: float
    f1: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GenStats:
    correct_fraction: float
    parseable_fraction: float
    mean_chars: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FlopReport:
    expert_params: float  # billions
    amateur_params: float
    length_ratio: float
    per_token_overhead: float  # fractions, not percent
    total_overhead: float

    def as_dict(self) -> dict:
        return asdict(self)


def _ngrams(ids: Sequence[int], n: int) -> list[tuple[int, ...]]:
    return [tuple(ids[i:i + n]) for i in range(len(ids) - n + 1)]


def copy_metrics(
    prompt: TokenSequence, generation: TokenSequence, n: int, multiset: bool = False
) -> CopyReport:
    """N-gram overlap between a generation and its prompt.

    Default semantics are distinct-set: precision = |G cap P| / |G| over the
    sets of distinct n-grams, recall symmetric.  ``multiset=True`` switches
    to clipped-count overlap for occurrence-weighted numbers.
    """
    if not (1 <= n <= 4):
        raise MetricError(f"n must be in [1, 4], got {n!r}")
    if len(prompt.ids) < n or len(generation.ids) < n:
        raise MetricError(f"both sequences need at least n={n} tokens")
    if multiset:
        gen_counts = Counter(_ngrams(generation.ids, n))
        prompt_counts = Counter(_ngrams(prompt.ids, n))
        overlap = sum(min(c, prompt_counts[g]) for g, c in gen_counts.items())
        precision = overlap / sum(gen_counts.values())
        recall = overlap / sum(prompt_counts.values())
    else:
        gen_set = set(_ngrams(generation.ids, n))
        prompt_set = set(_ngrams(prompt.ids, n))
        shared = len(gen_set & prompt_set)
        precision = shared / len(gen_set)
        recall = shared / len(prompt_set)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return CopyReport(n=n, precision=precision, recall=recall, f1=f1)


def _gold_canonical(gold: str) -> str:
    gold = gold.strip()
    return canonical_number(gold) if _NUMBER_RE.fullmatch(gold) else gold


def generation_stats(
    records: Sequence[GenerationRecord | FailedGeneration],
    vocab: Vocabulary,
    pattern: AnswerPattern,
    golds: Sequence[str],
) -> GenStats:
    """Exact-match accuracy, extraction rate, and mean continuation length.

    Failed generations count as unparseable with zero characters.
    """
    if not records:
        raise UsageError("records list is empty")
    if len(records) != len(golds):
        raise UsageError(f"gold list misaligned: {len(records)} records vs {len(golds)} golds")
    correct = 0
    parseable = 0
    total_chars = 0
    for record, gold in zip(records, golds):
        if isinstance(record, FailedGeneration):
            continue
        text = vocab.decode(record.continuation.ids)
        total_chars += len(text)
        answer = extract_answer(text, pattern)
        if answer.found:
            parseable += 1
            if answer.canonical == _gold_canonical(gold):
                correct += 1
    count = len(records)
    return GenStats(
        correct_fraction=correct / count,
        parseable_fraction=parseable / count,
        mean_chars=total_chars / count,
    )


def flop_overhead(expert_params: float, amateur_params: float, length_ratio: float = 1.0) -> FlopReport:
    """Fractional extra compute from running the amateur alongside the expert.

    Per token the amateur adds amateur/expert of the expert's cost (the
    2N-per-parameter model, context term dropped); any generation-length
    inflation multiplies the whole pass, so
    total = (1 + amateur/expert) * length_ratio - 1.
    """
    if not expert_params > 0:
        raise ConfigurationError(f"expert_params must be > 0, got {expert_params!r}")
    if amateur_params < 0:
        raise ConfigurationError(f"amateur_params must be >= 0, got {amateur_params!r}")
    if not length_ratio > 0:
        raise ConfigurationError(f"length_ratio must be > 0, got {length_ratio!r}")
    per_token = amateur_params / expert_params
    total = (1.0 + per_token) * length_ratio - 1.0
    return FlopReport(
        expert_params=expert_params,
        amateur_params=amateur_params,
        length_ratio=length_ratio,
        per_token_overhead=per_token,
        total_overhead=total,
    )


@dataclass(frozen=True)
class CostPoint:
    k: int
    method: str  # plain | cd
    relative_flops: float


def self_consistency_cost(k: int, report: FlopReport) -> tuple[CostPoint, CostPoint]:
    """Relative FLOPs of k-path self-consistency, against one plain expert pass."""
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k!r}")
    cd = k * (1.0 + report.per_token_overhead) * report.length_ratio
    return (
        CostPoint(k=k, method="plain", relative_flops=float(k)),
        CostPoint(k=k, method="cd", relative_flops=cd),
    )


def cost_curve(ks: Sequence[int], report: FlopReport) -> list[CostPoint]:
    points: list[CostPoint] = []
    for k in ks:
        points.extend(self_consistency_cost(k, report))
    return points


def write_cost_csv(points: Sequence[CostPoint], path: str | Path) -> None:
    """Plot-ready CSV with header (k, method, relative_flops)."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["k", "method", "relative_flops"])
        for point in points:
            writer.writerow([point.k, point.method, repr(point.relative_flops)])

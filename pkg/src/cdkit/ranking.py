"""Multiple-choice ranking: teacher-forced contrastive scoring of candidates.

Each candidate completion is scored position by position under the combined
expert/amateur objective, summed in log space, length-normalized, and the
candidates are ordered by normalized score (lowest index wins ties).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .core import CdConfig, log_softmax
from .decoding import _combined_for_step, _require_pair
from .errors import DataError, UsageError, ValidationError
from .scorers import Scorer, TokenSequence

LENGTH_BASES = ("characters", "tokens", "none")

TASKS_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ChoiceTask:
    context: TokenSequence
    candidates: tuple[TokenSequence, ...]
    gold_index: int | None = None

    def __post_init__(self):
        candidates = tuple(self.candidates)
        if len(candidates) < 2:
            raise ValidationError("a choice task needs at least 2 candidates")
        for cand in candidates:
            if cand.vocab_id != self.context.vocab_id:
                raise ValidationError("candidates must share the context vocabulary")
            if not cand.ids:
                raise ValidationError("candidate completions must be non-empty")
        if self.gold_index is not None and not (0 <= self.gold_index < len(candidates)):
            raise ValidationError("gold_index out of range")
        object.__setattr__(self, "candidates", candidates)


@dataclass(frozen=True)
class RankedChoice:
    index: int
    raw_score: float  # nats
    normalized_score: float
    length_basis: str


@dataclass(frozen=True)
class TaskRanking:
    """Candidates ordered best-first plus the top-1 correctness bit."""

    ranked: tuple[RankedChoice, ...]
    correct: bool | None


def _divisor(completion: TokenSequence, vocab, basis: str) -> float:
    if basis == "tokens":
        return float(len(completion.ids))
    if basis == "characters":
        # Specials contribute no characters; never divide by zero.
        return float(max(len(vocab.decode(completion.ids)), 1))
    if basis == "none":
        return 1.0
    raise UsageError(f"length basis must be one of {LENGTH_BASES}, got {basis!r}")


def score_completion(
    expert: Scorer,
    amateur: Scorer,
    context: TokenSequence,
    completion: TokenSequence,
    cfg: CdConfig,
    norm: str = "characters",
    apply_mask: bool = True,
    index: int = 0,
) -> RankedChoice:
    """Teacher-forced contrastive log-probability of ``completion``.

    raw_score sums log-softmax of the combined logits at each realized
    token.  With ``apply_mask`` (default) a completion token outside the
    step's valid set scores -inf; with the flag off no alpha-mask is
    applied and beta=0 reduces to the plain expert log-likelihood.
    """
    if not completion.ids:
        raise UsageError("completion must be non-empty")
    _require_pair(expert, amateur)
    context.validate_against(expert.vocabulary)
    completion.validate_against(expert.vocabulary)
    if not context.ids or context.ids[0] != expert.vocabulary.bos_id:
        raise UsageError("context must be non-empty and start with BOS")
    ids = list(context.ids)
    raw = 0.0
    for step, token in enumerate(completion.ids):
        combined = _combined_for_step(expert, amateur, ids, step, cfg, remask=apply_mask)
        logprobs = log_softmax(combined.materialize())
        raw += float(logprobs[token])
        ids.append(token)
    normalized = raw / _divisor(completion, expert.vocabulary, norm)
    return RankedChoice(index=index, raw_score=raw, normalized_score=normalized, length_basis=norm)


def rank_task(
    expert: Scorer,
    amateur: Scorer,
    task: ChoiceTask,
    cfg: CdConfig,
    norm: str = "characters",
    apply_mask: bool = True,
) -> TaskRanking:
    """Score every candidate and order them best-first.

    Sorting is by normalized score descending with lowest-index tie-break;
    ``correct`` is set iff the top candidate is the gold one.
    """
    choices = [
        score_completion(expert, amateur, task.context, cand, cfg, norm, apply_mask, index=i)
        for i, cand in enumerate(task.candidates)
    ]
    ranked = tuple(sorted(choices, key=lambda c: (-c.normalized_score, c.index)))
    correct = None if task.gold_index is None else ranked[0].index == task.gold_index
    return TaskRanking(ranked=ranked, correct=correct)


def rank_tasks(
    expert: Scorer,
    amateur: Scorer,
    tasks: Sequence[ChoiceTask],
    cfg: CdConfig,
    norm: str = "characters",
    apply_mask: bool = True,
) -> tuple[list[TaskRanking], float]:
    """Rank a task list; returns per-task results and mean accuracy."""
    if not tasks:
        raise UsageError("task list is empty")
    results = [rank_task(expert, amateur, task, cfg, norm, apply_mask) for task in tasks]
    scored = [r for r in results if r.correct is not None]
    accuracy = sum(r.correct for r in scored) / len(scored) if scored else float("nan")
    return results, accuracy


def save_choice_tasks(tasks: Sequence[ChoiceTask], path: str | Path) -> None:
    """One JSON task per line: {context, candidates[], gold} over token ids."""
    with open(path, "w", encoding="utf-8") as handle:
        for task in tasks:
            handle.write(json.dumps({
                "schema_version": TASKS_FORMAT_VERSION,
                "vocab_id": task.context.vocab_id,
                "context": list(task.context.ids),
                "candidates": [list(c.ids) for c in task.candidates],
                "gold": task.gold_index,
            }) + "\n")


def load_choice_tasks(path: str | Path) -> list[ChoiceTask]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"task file not found: {path}")
    tasks = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        if row.get("schema_version") != TASKS_FORMAT_VERSION:
            raise DataError(f"{path}:{lineno}: unsupported task schema version")
        try:
            vocab_id = str(row["vocab_id"])
            gold = row["gold"]
            tasks.append(ChoiceTask(
                context=TokenSequence(vocab_id, tuple(row["context"])),
                candidates=tuple(TokenSequence(vocab_id, tuple(c)) for c in row["candidates"]),
                gold_index=None if gold is None else int(gold),
            ))
        except (KeyError, TypeError, ValidationError) as exc:
            raise DataError(f"{path}:{lineno}: malformed task record ({exc})") from exc
    if not tasks:
        raise DataError(f"task file contains no tasks: {path}")
    return tasks

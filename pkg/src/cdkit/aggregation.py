"""Self-consistency: answer extraction and majority voting over sampled paths."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .decoding import DecodeRequest, FailedGeneration, Strategy, decode_batch
from .errors import UsageError, ValidationError
from .rng import derive_key
from .scorers import Scorer, TokenSequence

PATTERN_KINDS = ("last-number", "after-marker")

# Decimal numbers as they appear in prose: optional sign, thousands commas,
# optional fractional part.  A leading digit is required, so ".5" is not a
# match but "0.5" is.
_NUMBER_RE = re.compile(r"[-+]?\d[\d,]*(?:\.\d+)?")


@dataclass(frozen=True)
class AnswerPattern:
    kind: str  # last-number | after-marker
    marker: str | None = None

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ValidationError(f"pattern kind must be one of {PATTERN_KINDS}, got {self.kind!r}")
        if self.kind == "after-marker" and not self.marker:
            raise ValidationError("after-marker pattern needs a marker string")


@dataclass(frozen=True)
class ExtractedAnswer:
    """``raw_text`` is the matched number substring, empty when none found."""

    raw_text: str
    canonical: str
    found: bool

    def __post_init__(self):
        if self.found == (self.canonical == ""):
            raise ValidationError("canonical must be empty exactly when found is false")


@dataclass(frozen=True)
class VoteResult:
    winner: str
    counts: dict[str, int]
    k: int
    valid_paths: int

    def __post_init__(self):
        if sum(self.counts.values()) != self.valid_paths:
            raise ValidationError("vote counts must sum to the number of valid paths")


def canonical_number(raw: str) -> str:
    """Normalize a decimal string for exact-match comparison.

    Strips thousands commas, a leading +, leading zeros, and trailing
    fractional zeros; collapses -0 to 0.  Works on the string form only so
    values like 0.1 never pick up binary-float artifacts.
    """
    text = raw.strip().replace(",", "")
    if text.startswith("+"):
        text = text[1:]
    negative = text.startswith("-")
    if negative:
        text = text[1:]
    if "." in text:
        int_part, frac = text.split(".", 1)
        frac = frac.rstrip("0")
    else:
        int_part, frac = text, ""
    int_part = int_part.lstrip("0") or "0"
    canonical = int_part + ("." + frac if frac else "")
    if negative and canonical != "0":
        canonical = "-" + canonical
    return canonical


def extract_answer(text: str, pattern: AnswerPattern) -> ExtractedAnswer:
    """Pull the answer number out of generated text.

    last-number takes the final number in the text; after-marker takes the
    first number following the first occurrence of the marker.  Absence is
    reported via found=False, never an error.
    """
    raw = None
    if pattern.kind == "last-number":
        matches = _NUMBER_RE.findall(text)
        if matches:
            raw = matches[-1]
    else:
        at = text.find(pattern.marker)
        if at >= 0:
            hit = _NUMBER_RE.search(text, at + len(pattern.marker))
            if hit:
                raw = hit.group(0)
    if raw is None:
        return ExtractedAnswer(raw_text="", canonical="", found=False)
    return ExtractedAnswer(raw_text=raw, canonical=canonical_number(raw), found=True)


def majority_vote(answers: Sequence[ExtractedAnswer]) -> VoteResult:
    """Most frequent canonical answer among the found ones.

    Ties break toward the answer whose first occurrence comes earliest in
    the input list; an all-not-found list yields an empty winner.
    """
    if not answers:
        raise UsageError("majority_vote needs at least one answer")
    counts: dict[str, int] = {}
    for answer in answers:
        if answer.found:
            counts[answer.canonical] = counts.get(answer.canonical, 0) + 1
    winner = ""
    best = 0
    for canonical, count in counts.items():  # insertion order == first occurrence
        if count > best:
            winner, best = canonical, count
    return VoteResult(winner=winner, counts=counts, k=len(answers), valid_paths=sum(counts.values()))


@dataclass(frozen=True)
class SelfConsistencyResult:
    vote: VoteResult
    records: tuple  # GenerationRecord | FailedGeneration per path
    answers: tuple[ExtractedAnswer, ...]


def self_consistency(
    expert: Scorer,
    prompt: TokenSequence,
    k: int,
    strategy: Strategy,
    seed: int,
    pattern: AnswerPattern,
    amateur: Scorer | None = None,
    max_new_tokens: int = 32,
    stop: frozenset[int] | None = None,
    parallelism: int = 1,
) -> SelfConsistencyResult:
    """Sample k paths, extract an answer from each, and vote.

    Path i runs with seed derive_key(seed, i), so the whole vote is a pure
    function of (master seed, prompt, strategy).  Failed paths join the
    vote as found=False.  Deterministic strategies are allowed but make
    every path identical.
    """
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k!r}")
    requests = [
        DecodeRequest(
            prompt=prompt,
            max_new_tokens=max_new_tokens,
            strategy=strategy,
            seed=derive_key(seed, i),
            stop=stop,
        )
        for i in range(k)
    ]
    records = decode_batch(expert, requests, parallelism, amateur)
    vocab = expert.vocabulary
    answers = []
    for record in records:
        if isinstance(record, FailedGeneration):
            answers.append(ExtractedAnswer(raw_text="", canonical="", found=False))
        else:
            answers.append(extract_answer(vocab.decode(record.continuation.ids), pattern))
    return SelfConsistencyResult(
        vote=majority_vote(answers), records=tuple(records), answers=tuple(answers)
    )

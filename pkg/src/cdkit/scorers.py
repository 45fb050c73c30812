"""Pluggable next-token scorers: table-driven, n-gram, and prefix-wrapped.

A scorer owns a vocabulary and answers ``score_next(context)`` with finite
logits over the full vocabulary.  Scorers are immutable after construction
or training, so concurrent queries are safe.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import LogitVector
from .errors import DataError, ScorerCompatibilityError, UsageError, ValidationError

# Raw probability assigned to table entries the rule leaves unspecified.
# Small enough to never matter, large enough that log() stays finite.
_TABLE_FLOOR = 1e-300

NGRAM_FORMAT = "cdkit-ngram"
NGRAM_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Vocabulary:
    """Named, ordered token inventory with BOS/EOS specials."""

    id: str
    tokens: tuple[str, ...]
    bos_id: int = 0
    eos_id: int = 1

    def __post_init__(self):
        tokens = tuple(self.tokens)
        if len(tokens) < 2:
            raise ValidationError("vocabulary needs at least 2 tokens")
        if len(set(tokens)) != len(tokens):
            raise ValidationError("vocabulary tokens must be unique")
        if self.bos_id == self.eos_id:
            raise ValidationError("BOS and EOS must be distinct token ids")
        for name, idx in (("bos_id", self.bos_id), ("eos_id", self.eos_id)):
            if not (0 <= idx < len(tokens)):
                raise ValidationError(f"{name} out of range")
        object.__setattr__(self, "tokens", tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def token_to_id(self, token: str) -> int:
        try:
            index = self._index
        except AttributeError:
            index = {tok: i for i, tok in enumerate(self.tokens)}
            object.__setattr__(self, "_index", index)
        try:
            return index[token]
        except KeyError:
            raise ValidationError(f"token {token!r} not in vocabulary {self.id!r}") from None

    def encode_chars(self, text: str, add_bos: bool = True) -> "TokenSequence":
        """Character-level encoding; every character must be a vocabulary token."""
        ids = [self.bos_id] if add_bos else []
        ids.extend(self.token_to_id(ch) for ch in text)
        return TokenSequence(self.id, tuple(ids))

    def decode(self, ids: Sequence[int], skip_special: bool = True) -> str:
        parts = []
        for i in ids:
            if skip_special and (i == self.bos_id or i == self.eos_id):
                continue
            parts.append(self.tokens[i])
        return "".join(parts)

    def as_dict(self) -> dict:
        return {"id": self.id, "tokens": list(self.tokens), "bos_id": self.bos_id, "eos_id": self.eos_id}

    @classmethod
    def from_dict(cls, data: Mapping) -> "Vocabulary":
        return cls(
            id=str(data["id"]),
            tokens=tuple(data["tokens"]),
            bos_id=int(data["bos_id"]),
            eos_id=int(data["eos_id"]),
        )


@dataclass(frozen=True)
class TokenSequence:
    """Token ids over a named vocabulary."""

    vocab_id: str
    ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self) -> int:
        return len(self.ids)

    def validate_against(self, vocab: Vocabulary) -> None:
        if self.vocab_id != vocab.id:
            raise ScorerCompatibilityError(
                f"sequence vocabulary {self.vocab_id!r} does not match {vocab.id!r}"
            )
        if self.ids and (min(self.ids) < 0 or max(self.ids) >= vocab.size):
            raise ValidationError("token id out of vocabulary range")


@dataclass(frozen=True)
class ScorerDescriptor:
    """Metadata a scorer advertises for pairing and FLOP accounting."""

    kind: str  # table | ngram | prefix-wrapped | external
    parameter_count: float  # billions
    vocab_id: str

    def __post_init__(self):
        if self.parameter_count < 0:
            raise ValidationError("parameter_count must be >= 0")


@dataclass(frozen=True)
class PairReport:
    ok: bool
    reason: str | None
    parameter_ratio: float | None


def check_pair(expert: ScorerDescriptor, amateur: ScorerDescriptor) -> PairReport:
    """Validate that two scorers can be contrasted; records the size ratio."""
    ratio = None
    if expert.parameter_count > 0:
        ratio = amateur.parameter_count / expert.parameter_count
    if expert.vocab_id != amateur.vocab_id:
        return PairReport(ok=False, reason="vocabulary mismatch", parameter_ratio=ratio)
    return PairReport(ok=True, reason=None, parameter_ratio=ratio)


class Scorer:
    """Base next-token scorer.  Subclasses implement ``_score_ids``."""

    vocabulary: Vocabulary
    descriptor: ScorerDescriptor

    def score_next(self, context: TokenSequence) -> LogitVector:
        """Finite logits over the full vocabulary for the next position.

        The context must be non-empty and start with BOS; results are
        deterministic for a fixed scorer state and context.
        """
        context.validate_against(self.vocabulary)
        if not context.ids:
            raise UsageError("context must be non-empty (BOS at position 0)")
        if context.ids[0] != self.vocabulary.bos_id:
            raise UsageError("context must start with the BOS token")
        return self._score_ids(context.ids)

    def _score_ids(self, ids: Sequence[int]) -> LogitVector:
        raise NotImplementedError


class TableScorer(Scorer):
    """Scorer driven by explicit context -> distribution rules.

    Rules map a context suffix (tuple of token ids) to a next-token
    distribution; the longest matching suffix wins, falling back to
    ``default`` (uniform if omitted).  Distribution entries are exact raw
    probabilities; tokens a rule does not mention receive a negligible
    floor so logits stay finite.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        rules: Mapping[tuple[int, ...], Mapping[int, float]] | None = None,
        default: Mapping[int, float] | None = None,
        parameter_count: float = 0.0,
    ):
        self.vocabulary = vocab
        self.descriptor = ScorerDescriptor("table", parameter_count, vocab.id)
        self._logits: dict[tuple[int, ...], LogitVector] = {}
        self._max_rule_len = 0
        rules = dict(rules or {})
        for ctx, dist in rules.items():
            key = tuple(int(i) for i in ctx)
            self._logits[key] = self._dist_to_logits(dist)
            self._max_rule_len = max(self._max_rule_len, len(key))
        if default is None:
            default = {i: 1.0 / vocab.size for i in range(vocab.size)}
        self._default = self._dist_to_logits(default)

    def _dist_to_logits(self, dist: Mapping[int, float]) -> LogitVector:
        values = np.full(self.vocabulary.size, math.log(_TABLE_FLOOR), dtype=np.float64)
        total = 0.0
        for token, prob in dist.items():
            token = int(token)
            if not (0 <= token < self.vocabulary.size):
                raise ValidationError(f"rule token id {token} out of range")
            if not (prob > 0.0):
                raise ValidationError("rule probabilities must be > 0; omit impossible tokens")
            values[token] = math.log(prob)
            total += prob
        if abs(total - 1.0) > 1e-6:
            raise ValidationError(f"rule probabilities must sum to 1 (got {total!r})")
        return LogitVector(values)

    def _score_ids(self, ids: Sequence[int]) -> LogitVector:
        longest = min(self._max_rule_len, len(ids))
        for take in range(longest, 0, -1):
            hit = self._logits.get(tuple(ids[-take:]))
            if hit is not None:
                return hit
        return self._default


class NgramScorer(Scorer):
    """Add-k smoothed n-gram model with stupid backoff.

    Counts are kept per context length 0..order-1; a context backs off to
    the next shorter one when it was never observed.  Smoothing runs over
    the full vocabulary, so every token has strictly positive probability.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        smoothing_k: float,
        counts: dict[tuple[int, ...], dict[int, int]],
    ):
        if not (1 <= order <= 5):
            raise ValidationError(f"order must be in [1, 5], got {order}")
        if not smoothing_k > 0:
            raise ValidationError(f"smoothing_k must be > 0, got {smoothing_k!r}")
        self.vocabulary = vocab
        self.order = order
        self.smoothing_k = float(smoothing_k)
        self._counts = counts
        self._totals = {ctx: sum(dist.values()) for ctx, dist in counts.items()}
        # parameter_count in billions: one "parameter" per stored count entry.
        n_entries = sum(len(dist) for dist in counts.values())
        self.descriptor = ScorerDescriptor("ngram", n_entries / 1e9, vocab.id)
        self._cache: dict[tuple[int, ...], LogitVector] = {}
        self._cache_lock = threading.Lock()

    def _context_for(self, ids: Sequence[int]) -> tuple[int, ...]:
        take = self.order - 1
        tail = tuple(ids[-take:]) if take > 0 else ()
        # Stupid backoff: drop the oldest token until the context was seen.
        while tail and tail not in self._counts:
            tail = tail[1:]
        return tail

    def _score_ids(self, ids: Sequence[int]) -> LogitVector:
        tail = self._context_for(ids)
        cached = self._cache.get(tail)
        if cached is not None:
            return cached
        size = self.vocabulary.size
        k = self.smoothing_k
        counts = self._counts.get(tail, {})
        total = self._totals.get(tail, 0)
        probs = np.full(size, k, dtype=np.float64)
        for token, count in counts.items():
            probs[token] += count
        logits = np.log(probs) - math.log(total + k * size)
        vector = LogitVector(logits)
        with self._cache_lock:
            self._cache[tail] = vector
        return vector

    def as_dict(self) -> dict:
        counts = {
            ",".join(str(i) for i in ctx): {str(t): c for t, c in sorted(dist.items())}
            for ctx, dist in sorted(self._counts.items())
        }
        return {
            "format": NGRAM_FORMAT,
            "version": NGRAM_FORMAT_VERSION,
            "vocab": self.vocabulary.as_dict(),
            "order": self.order,
            "smoothing_k": self.smoothing_k,
            "counts": counts,
        }


def train_ngram(
    corpus: Sequence[TokenSequence], vocab: Vocabulary, order: int, smoothing_k: float = 0.1
) -> NgramScorer:
    """Count n-gram transitions and return the smoothed scorer.

    Every position after the first token of each sequence is a prediction
    target; contexts of every length up to order-1 are recorded so backoff
    always has an estimate to land on.
    """
    if not corpus:
        raise DataError("training corpus is empty")
    if not (1 <= order <= 5):
        raise ValidationError(f"order must be in [1, 5], got {order}")
    if not smoothing_k > 0:
        raise ValidationError(f"smoothing_k must be > 0, got {smoothing_k!r}")
    for seq in corpus:
        seq.validate_against(vocab)
    counts: dict[tuple[int, ...], dict[int, int]] = {}
    for seq in corpus:
        ids = seq.ids
        for pos in range(1, len(ids)):
            target = ids[pos]
            for ctx_len in range(0, order):
                if ctx_len > pos:
                    break
                ctx = ids[pos - ctx_len:pos]
                bucket = counts.setdefault(ctx, {})
                bucket[target] = bucket.get(target, 0) + 1
    return NgramScorer(vocab, order, smoothing_k, counts)


class PrefixWrappedScorer(Scorer):
    """Scorer that silently prepends a (negative) prompt to every context.

    ``score_next(ctx)`` answers as the inner scorer would on
    BOS + prefix + ctx-without-BOS, which turns a well-behaved model into
    a contrastable "misled" amateur.
    """

    def __init__(self, inner: Scorer, negative_prefix: TokenSequence):
        negative_prefix.validate_against(inner.vocabulary)
        self.inner = inner
        self.vocabulary = inner.vocabulary
        prefix_ids = negative_prefix.ids
        if prefix_ids and prefix_ids[0] == self.vocabulary.bos_id:
            prefix_ids = prefix_ids[1:]
        self._prefix = prefix_ids
        self.descriptor = ScorerDescriptor(
            "prefix-wrapped", inner.descriptor.parameter_count, inner.descriptor.vocab_id
        )

    def _score_ids(self, ids: Sequence[int]) -> LogitVector:
        stripped = ids[1:] if ids and ids[0] == self.vocabulary.bos_id else ids
        effective = (self.vocabulary.bos_id,) + self._prefix + tuple(stripped)
        return self.inner._score_ids(effective)


def with_prefix(scorer: Scorer, negative_prefix: TokenSequence) -> PrefixWrappedScorer:
    """Wrap ``scorer`` so every query is conditioned on ``negative_prefix``."""
    return PrefixWrappedScorer(scorer, negative_prefix)


def save_ngram(scorer: NgramScorer, path: str | Path) -> None:
    """Serialize to the versioned cdkit-ngram JSON format (round-trip exact)."""
    Path(path).write_text(json.dumps(scorer.as_dict(), sort_keys=True), encoding="utf-8")


def load_ngram(path: str | Path) -> NgramScorer:
    path = Path(path)
    if not path.exists():
        raise DataError(f"scorer file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"scorer file is not valid JSON: {path} ({exc})") from exc
    if data.get("format") != NGRAM_FORMAT:
        raise DataError(f"unrecognized scorer format in {path}")
    if data.get("version") != NGRAM_FORMAT_VERSION:
        raise DataError(f"unsupported {NGRAM_FORMAT} version {data.get('version')!r}")
    vocab = Vocabulary.from_dict(data["vocab"])
    counts: dict[tuple[int, ...], dict[int, int]] = {}
    for ctx_key, dist in data["counts"].items():
        ctx = tuple(int(part) for part in ctx_key.split(",")) if ctx_key else ()
        counts[ctx] = {int(t): int(c) for t, c in dist.items()}
    return NgramScorer(vocab, int(data["order"]), float(data["smoothing_k"]), counts)

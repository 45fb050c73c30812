"""Sequence decoding loops: greedy, truncated sampling, and contrastive variants.

All randomness is counter-based: step ``s`` of request ``i`` consumes the
single uniform ``uniform_at(derive_key(seed, i), s)``, so records are
bit-identical across platforms, rerun counts, and batch parallelism.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .core import (
    CdConfig,
    LogitVector,
    alpha_mask_logits,
    combine_original,
    combine_refactored,
    combine_scores,
)
from .errors import (
    CdkitError,
    ConfigurationError,
    InternalInvariantError,
    ScorerCompatibilityError,
    ScorerProtocolError,
    UsageError,
    ValidationError,
)
from .rng import derive_key, uniform_at
from .scorers import Scorer, TokenSequence, check_pair

DIAGNOSTICS_CAP = 4096


@dataclass(frozen=True)
class Greedy:
    pass


@dataclass(frozen=True)
class Sample:
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0.0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature!r}")


@dataclass(frozen=True)
class TopK:
    k: int
    temperature: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError(f"top_k k must be >= 1, got {self.k!r}")
        if not self.temperature > 0.0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature!r}")


@dataclass(frozen=True)
class Nucleus:
    p: float
    temperature: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ConfigurationError(f"nucleus p must be in (0, 1], got {self.p!r}")
        if not self.temperature > 0.0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature!r}")


@dataclass(frozen=True)
class CdGreedy:
    cfg: CdConfig = field(default_factory=CdConfig)


@dataclass(frozen=True)
class CdSample:
    """Contrastive sampling; ``remask=False`` skips the per-step alpha-mask."""

    cfg: CdConfig = field(default_factory=CdConfig)
    remask: bool = True


Strategy = Union[Greedy, Sample, TopK, Nucleus, CdGreedy, CdSample]

_SAMPLING_STRATEGIES = (Sample, TopK, Nucleus, CdSample)


@dataclass(frozen=True)
class DecodeRequest:
    prompt: TokenSequence
    max_new_tokens: int
    strategy: Strategy
    seed: int = 0
    stop: frozenset[int] | None = None
    diagnostics_cap: int = DIAGNOSTICS_CAP

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValidationError(f"max_new_tokens must be >= 1, got {self.max_new_tokens!r}")
        if not (0 <= self.seed < 2 ** 64):
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.stop is not None:
            object.__setattr__(self, "stop", frozenset(int(i) for i in self.stop))
        if self.diagnostics_cap < 0:
            raise ValidationError("diagnostics_cap must be >= 0")


@dataclass(frozen=True)
class GenerationRecord:
    """One finished decode.

    ``per_step`` holds (chosen id, candidate-set size, active logit of the
    chosen token) for the first ``diagnostics_cap`` steps; the continuation
    itself is never truncated.
    """

    request: DecodeRequest
    continuation: TokenSequence
    per_step: tuple[tuple[int, int, float], ...]
    finish_reason: str  # stop-token | length

    def __post_init__(self):
        if self.finish_reason not in ("stop-token", "length"):
            raise ValidationError(f"unknown finish_reason {self.finish_reason!r}")
        if len(self.continuation) > self.request.max_new_tokens:
            raise InternalInvariantError("continuation exceeded max_new_tokens")
        expected = min(len(self.continuation), self.request.diagnostics_cap)
        if len(self.per_step) != expected:
            raise InternalInvariantError("per_step diagnostics out of sync with continuation")


@dataclass(frozen=True)
class FailedGeneration:
    """Per-request failure marker so batches survive individual errors."""

    request: DecodeRequest
    error: str
    step: int | None = None


def sample_index(probs: np.ndarray, u: float) -> int:
    """Index drawn from ``probs`` using the uniform ``u`` via inverse CDF.

    Zero-probability entries are unreachable; the final-index clamp covers
    the case where rounding leaves the CDF total slightly below ``u``.
    """
    if not (0.0 <= u < 1.0):
        raise ValidationError(f"uniform draw must lie in [0, 1), got {u!r}")
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= probs.size:
        nonzero = np.flatnonzero(probs)
        if nonzero.size == 0:
            raise InternalInvariantError("sampling from an all-zero distribution")
        idx = int(nonzero[-1])
    return idx


def _softmax_active(active: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax over logits that may contain -inf for excluded tokens."""
    scaled = active / temperature
    top = scaled.max()
    if not np.isfinite(top):
        raise InternalInvariantError("candidate set is empty after truncation")
    weights = np.exp(scaled - top)
    return weights / weights.sum()


def _ordered_desc(values: np.ndarray) -> np.ndarray:
    """Indices by descending value, ties broken toward the lowest token id."""
    return np.lexsort((np.arange(values.size), -values))


def _score(scorer: Scorer, ids: Sequence[int], step: int) -> LogitVector:
    try:
        return scorer._score_ids(ids)
    except CdkitError as exc:
        raise type(exc)(f"scorer failed at decode step {step}: {exc}") from exc


def _validate_prompt(scorer: Scorer, prompt: TokenSequence) -> None:
    prompt.validate_against(scorer.vocabulary)
    if not prompt.ids:
        raise UsageError("prompt must be non-empty (BOS at position 0)")
    if prompt.ids[0] != scorer.vocabulary.bos_id:
        raise UsageError("prompt must start with the BOS token")


def _combined_for_step(
    expert: Scorer, amateur: Scorer, ids: Sequence[int], step: int, cfg: CdConfig, remask: bool
) -> LogitVector:
    expert_logits = _score(expert, ids, step)
    amateur_logits = _score(amateur, ids, step)
    if not remask:
        return LogitVector(combine_scores(expert_logits, amateur_logits, cfg.beta))
    if cfg.formulation == "original":
        return combine_original(expert_logits, amateur_logits, cfg.amateur_temp, cfg.alpha)
    return combine_refactored(expert_logits, amateur_logits, cfg)


def _run_loop(request: DecodeRequest, vocab_id: str, step_fn) -> GenerationRecord:
    ids = list(request.prompt.ids)
    new_ids: list[int] = []
    per_step: list[tuple[int, int, float]] = []
    finish = "length"
    for step in range(request.max_new_tokens):
        chosen, candidate_count, chosen_logit = step_fn(ids, step)
        ids.append(chosen)
        new_ids.append(chosen)
        if len(per_step) < request.diagnostics_cap:
            per_step.append((chosen, candidate_count, chosen_logit))
        if request.stop is not None and chosen in request.stop:
            finish = "stop-token"
            break
    return GenerationRecord(
        request=request,
        continuation=TokenSequence(vocab_id, tuple(new_ids)),
        per_step=tuple(per_step),
        finish_reason=finish,
    )


def decode_greedy(expert: Scorer, request: DecodeRequest) -> GenerationRecord:
    """Argmax decoding; deterministic, lowest-token-id tie-break."""
    if not isinstance(request.strategy, Greedy):
        raise UsageError("decode_greedy requires the greedy strategy")
    _validate_prompt(expert, request.prompt)

    def step_fn(ids, step):
        logits = _score(expert, ids, step)
        chosen = logits.argmax()
        return chosen, logits.valid_count(), float(logits.values[chosen])

    return _run_loop(request, expert.vocabulary.id, step_fn)


def decode_cd_greedy(expert: Scorer, amateur: Scorer, request: DecodeRequest) -> GenerationRecord:
    """Greedy over the contrastive combination, alpha-masked each step."""
    if not isinstance(request.strategy, CdGreedy):
        raise UsageError("decode_cd_greedy requires the cd_greedy strategy")
    _require_pair(expert, amateur)
    _validate_prompt(expert, request.prompt)
    cfg = request.strategy.cfg

    def step_fn(ids, step):
        combined = _combined_for_step(expert, amateur, ids, step, cfg, remask=True)
        chosen = combined.argmax()
        return chosen, combined.valid_count(), float(combined.values[chosen])

    return _run_loop(request, expert.vocabulary.id, step_fn)


def decode_sample(
    expert: Scorer,
    request: DecodeRequest,
    amateur: Scorer | None = None,
    request_index: int = 0,
) -> GenerationRecord:
    """Seeded sampling for the sample / top_k / nucleus / cd_sample strategies.

    Each step draws one uniform from the stream keyed by
    (request.seed, request_index) and inverts the CDF of
    softmax(active logits / temperature) over the strategy's candidate set.
    """
    strategy = request.strategy
    if not isinstance(strategy, _SAMPLING_STRATEGIES):
        raise UsageError("decode_sample requires a sampling strategy")
    if isinstance(strategy, CdSample):
        if amateur is None:
            raise UsageError("cd_sample requires an amateur scorer")
        _require_pair(expert, amateur)
    _validate_prompt(expert, request.prompt)
    key = derive_key(request.seed, request_index)

    def step_fn(ids, step):
        if isinstance(strategy, CdSample):
            combined = _combined_for_step(
                expert, amateur, ids, step, strategy.cfg, strategy.remask
            )
            active = combined.materialize()
            count = combined.valid_count()
            temperature = strategy.cfg.output_temp
        else:
            logits = _score(expert, ids, step)
            active = logits.materialize()
            temperature = strategy.temperature
            if isinstance(strategy, TopK):
                order = _ordered_desc(active)
                drop = order[min(strategy.k, active.size):]
                active[drop] = -np.inf
            elif isinstance(strategy, Nucleus):
                probs = _softmax_active(active, temperature)
                order = _ordered_desc(probs)
                cumulative = np.cumsum(probs[order])
                cut = int(np.searchsorted(cumulative, strategy.p, side="left"))
                cut = min(cut, active.size - 1)
                active[order[cut + 1:]] = -np.inf
            count = int(np.isfinite(active).sum())
        probs = _softmax_active(active, temperature)
        chosen = sample_index(probs, uniform_at(key, step))
        return chosen, count, float(active[chosen])

    return _run_loop(request, expert.vocabulary.id, step_fn)


def decode(
    expert: Scorer,
    request: DecodeRequest,
    amateur: Scorer | None = None,
    request_index: int = 0,
) -> GenerationRecord:
    """Dispatch on the request's strategy."""
    strategy = request.strategy
    if isinstance(strategy, Greedy):
        return decode_greedy(expert, request)
    if isinstance(strategy, CdGreedy):
        if amateur is None:
            raise UsageError("cd_greedy requires an amateur scorer")
        return decode_cd_greedy(expert, amateur, request)
    return decode_sample(expert, request, amateur, request_index)


def decode_batch(
    expert: Scorer,
    requests: Sequence[DecodeRequest],
    parallelism: int = 1,
    amateur: Scorer | None = None,
) -> list[GenerationRecord | FailedGeneration]:
    """Decode many requests; output order matches input order.

    Request ``i`` samples from the stream derived from (seed, i), so results
    do not depend on the parallelism degree.  Individual failures become
    :class:`FailedGeneration` entries instead of aborting the batch, except
    protocol-level scorer failures (a dead adapter), which propagate.
    """
    if parallelism < 1:
        raise UsageError(f"parallelism must be >= 1, got {parallelism!r}")

    def run(indexed):
        index, request = indexed
        try:
            return decode(expert, request, amateur, request_index=index)
        except ScorerProtocolError:
            raise  # a broken scorer poisons every request; do not soft-fail
        except CdkitError as exc:
            return FailedGeneration(request=request, error=str(exc))

    items = list(enumerate(requests))
    if not items:
        return []
    if parallelism == 1 or len(items) == 1:
        return [run(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(run, items))


def _require_pair(expert: Scorer, amateur: Scorer) -> None:
    report = check_pair(expert.descriptor, amateur.descriptor)
    if not report.ok:
        raise ScorerCompatibilityError(f"scorer pair rejected: {report.reason}")

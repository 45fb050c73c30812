"""Pure numeric kernel for contrastive decoding.

Implements alpha-masking of expert logits, the two equivalent
expert/amateur combination rules, the probability-space view of the
combined distribution, and the mapping between the (beta, temperatures)
parameterization and the two-coefficient (kappa_e, kappa_a) form.

Numerics policy, used everywhere in the package:
- probability work happens in log space with max-subtraction;
- excluded tokens are a mask state on ``LogitVector``; -inf is only
  materialized at the softmax/sampling boundary;
- comparisons: 1e-9 absolute for probabilities, 1e-6 relative for logits;
- argmax ties break toward the lowest token id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateScorerError, ScorerCompatibilityError, ValidationError

PROB_ATOL = 1e-9
LOGIT_RTOL = 1e-6

# Sum tolerance accepted on externally supplied probability vectors.
_PROB_SUM_TOL = 1e-6


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ConfigurationError(f"{name} must contain at least one entry")
    return arr


@dataclass(frozen=True)
class LogitVector:
    """Unnormalized per-token scores (nats) for one decoding step.

    ``valid`` is an optional boolean mask marking tokens that survived the
    alpha-mask; ``None`` means every token is live.  Stored values are
    always finite -- excluded entries keep their finite score and are only
    turned into -inf by :meth:`materialize`.
    """

    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        arr = _as_float_array(self.values, "logits")
        if not np.isfinite(arr).all():
            raise ValidationError("logits must be finite; use the valid mask for exclusions")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if self.valid is not None:
            mask = np.asarray(self.valid, dtype=bool)
            if mask.shape != arr.shape:
                raise ValidationError("valid mask shape must match logits shape")
            if not mask.any():
                raise ValidationError("valid mask must keep at least one token")
            mask = mask.copy()
            mask.setflags(write=False)
            object.__setattr__(self, "valid", mask)

    @property
    def vocab_size(self) -> int:
        return int(self.values.size)

    def valid_count(self) -> int:
        return self.vocab_size if self.valid is None else int(self.valid.sum())

    def materialize(self) -> np.ndarray:
        """Writable copy with -inf at excluded entries (sampling boundary only)."""
        out = self.values.copy()
        if self.valid is not None:
            out[~self.valid] = -np.inf
        return out

    def argmax(self) -> int:
        """Highest-scoring live token; ties break toward the lowest token id."""
        # np.argmax returns the first maximal index, which is the tie-break we document.
        return int(np.argmax(self.materialize()))


@dataclass(frozen=True)
class ProbVector:
    """Normalized per-token probabilities."""

    values: np.ndarray

    def __post_init__(self):
        arr = _as_float_array(self.values, "probabilities")
        if ((arr < 0) | (arr > 1)).any():
            raise ValidationError("probabilities must lie in [0, 1]")
        total = float(arr.sum())
        if abs(total - 1.0) > _PROB_SUM_TOL:
            raise ValidationError(f"probabilities must sum to 1 (got {total!r})")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def vocab_size(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class ValidSet:
    """Token ids that survived the alpha-mask at one step."""

    members: frozenset[int]
    vocab_size: int

    def __post_init__(self):
        members = frozenset(int(i) for i in self.members)
        if not members:
            raise ValidationError("valid set must be non-empty")
        if min(members) < 0 or max(members) >= self.vocab_size:
            raise ValidationError("valid set members must lie in [0, vocab_size)")
        object.__setattr__(self, "members", members)

    def to_mask(self) -> np.ndarray:
        mask = np.zeros(self.vocab_size, dtype=bool)
        mask[sorted(self.members)] = True
        return mask

    def __contains__(self, token_id: int) -> bool:
        return int(token_id) in self.members

    def __len__(self) -> int:
        return len(self.members)


FORMULATIONS = ("original", "refactored")
TIE_BREAKS = ("lowest-token-id",)


@dataclass(frozen=True)
class CdConfig:
    """Hyperparameters for contrastive combination and CD sampling.

    Defaults follow the recommended operating point: alpha=0.1, beta=0.5.
    ``seed`` is carried for standalone use; the decoding loop draws its
    randomness from the request seed, which takes precedence.
    """

    alpha: float = 0.1
    beta: float = 0.5
    expert_temp: float = 1.0
    amateur_temp: float = 1.0
    output_temp: float = 1.0
    formulation: str = "refactored"
    tie_break: str = "lowest-token-id"
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigurationError(f"alpha must be in (0, 1], got {self.alpha!r}")
        if self.beta < 0.0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta!r}")
        for name in ("expert_temp", "amateur_temp", "output_temp"):
            value = getattr(self, name)
            if not value > 0.0:
                raise ConfigurationError(f"{name} must be > 0, got {value!r}")
        if self.formulation not in FORMULATIONS:
            raise ConfigurationError(f"formulation must be one of {FORMULATIONS}, got {self.formulation!r}")
        if self.tie_break not in TIE_BREAKS:
            raise ConfigurationError(f"tie_break must be one of {TIE_BREAKS}, got {self.tie_break!r}")
        if not (0 <= self.seed < 2 ** 64):
            raise ConfigurationError("seed must be a 64-bit unsigned integer")


def softmax(values, temperature: float = 1.0) -> np.ndarray:
    """Stable softmax; -inf entries receive probability exactly 0."""
    if not temperature > 0.0:
        raise ConfigurationError(f"temperature must be > 0, got {temperature!r}")
    arr = np.asarray(values, dtype=np.float64) / temperature
    shifted = arr - arr.max()
    weights = np.exp(shifted)
    return weights / weights.sum()


def log_softmax(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    shifted = arr - arr.max()
    return shifted - np.log(np.exp(shifted).sum())


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise ConfigurationError(f"alpha must be in (0, 1], got {alpha!r}")


def alpha_mask_logits(expert_logits: LogitVector, alpha: float) -> ValidSet:
    """Tokens whose expert logit clears log(alpha) + max logit.

    The set always contains every token attaining the maximum, so it is
    non-empty for any alpha in (0, 1].
    """
    _check_alpha(alpha)
    scores = expert_logits.values
    cutoff = np.log(alpha) + scores.max()
    keep = np.nonzero(scores >= cutoff)[0]
    return ValidSet(frozenset(int(i) for i in keep), expert_logits.vocab_size)


def alpha_mask_probs(expert_probs: ProbVector, alpha: float) -> ValidSet:
    """Probability-space mask: tokens with p >= alpha * max p.

    Equivalent to :func:`alpha_mask_logits` on the pre-softmax logits; kept
    as the independent oracle for that equivalence.
    """
    _check_alpha(alpha)
    probs = expert_probs.values
    keep = np.nonzero(probs >= alpha * probs.max())[0]
    return ValidSet(frozenset(int(i) for i in keep), expert_probs.vocab_size)


def _check_pair_sizes(expert: LogitVector, amateur: LogitVector) -> None:
    if expert.vocab_size != amateur.vocab_size:
        raise ScorerCompatibilityError(
            f"vocabulary size mismatch: expert {expert.vocab_size} vs amateur {amateur.vocab_size}"
        )


def combine_scores(expert: LogitVector, amateur: LogitVector, beta: float) -> np.ndarray:
    """Unmasked combination (1 + beta) * expert - beta * amateur."""
    _check_pair_sizes(expert, amateur)
    if beta < 0.0:
        raise ConfigurationError(f"beta must be >= 0, got {beta!r}")
    return (1.0 + beta) * expert.values - beta * amateur.values


def combine_refactored(expert: LogitVector, amateur: LogitVector, cfg: CdConfig) -> LogitVector:
    """Logit-space combination with the alpha-mask taken from the expert.

    Valid tokens score (1 + beta) * s_e - beta * s_a; everything else is in
    the excluded state.  This path fixes the intermediate temperatures at 1
    and exposes beta as the single contrast knob; ``cfg.expert_temp`` and
    ``cfg.amateur_temp`` are ignored here (they parameterize
    :func:`combine_original` and :func:`map_parameters`).
    """
    diffs = combine_scores(expert, amateur, cfg.beta)
    valid = alpha_mask_logits(expert, cfg.alpha)
    return LogitVector(diffs, valid.to_mask())


def combine_original(
    expert: LogitVector, amateur: LogitVector, amateur_temp: float, alpha: float
) -> LogitVector:
    """Probability-space combination: log p_e - log p_a with the amateur tempered.

    The mask is computed from the expert's post-softmax probabilities,
    matching the formulation where alpha thresholds probabilities directly.
    """
    _check_pair_sizes(expert, amateur)
    if not amateur_temp > 0.0:
        raise ConfigurationError(f"amateur_temp must be > 0, got {amateur_temp!r}")
    expert_logp = log_softmax(expert.values)
    amateur_logp = log_softmax(amateur.values / amateur_temp)
    valid = alpha_mask_probs(ProbVector(softmax(expert.values)), alpha)
    return LogitVector(expert_logp - amateur_logp, valid.to_mask())


def cd_probabilities(
    expert_probs: ProbVector, amateur_probs: ProbVector, beta: float, valid: ValidSet
) -> ProbVector:
    """Distribution proportional to p_e * (p_e / p_a)^beta on the valid set.

    Computed in log space; agrees with softmax(combine_refactored) on the
    valid set to within 1e-9.  Excluded tokens get probability exactly 0.
    """
    if expert_probs.vocab_size != amateur_probs.vocab_size:
        raise ScorerCompatibilityError(
            f"vocabulary size mismatch: expert {expert_probs.vocab_size} vs amateur {amateur_probs.vocab_size}"
        )
    if beta < 0.0:
        raise ConfigurationError(f"beta must be >= 0, got {beta!r}")
    if valid.vocab_size != expert_probs.vocab_size:
        raise ValidationError("valid set vocab_size must match the probability vectors")
    mask = valid.to_mask()
    p_a = amateur_probs.values[mask]
    if (p_a == 0.0).any():
        raise DegenerateScorerError("amateur assigns probability 0 to a valid token")
    p_e = expert_probs.values[mask]
    if (p_e == 0.0).all():
        raise DegenerateScorerError("expert assigns probability 0 to every valid token")
    with np.errstate(divide="ignore"):
        log_scores = (1.0 + beta) * np.log(p_e) - beta * np.log(p_a)
    weights = np.exp(log_scores - log_scores.max())
    out = np.zeros(expert_probs.vocab_size, dtype=np.float64)
    out[mask] = weights / weights.sum()
    return ProbVector(out)


def map_parameters(beta: float, tau_out: float, tau_e: float, tau_a: float) -> tuple[float, float]:
    """Collapse (beta, tau_out, tau_e, tau_a) into the two coefficients
    (kappa_e, kappa_a) of p_cd(i) ~ exp(kappa_e * e_i - kappa_a * a_i).

    The kappa_e == kappa_a configuration is rejected: it is the one point
    the (beta, tau_out) parameterization cannot reach.
    """
    if beta < 0.0:
        raise ConfigurationError(f"beta must be >= 0, got {beta!r}")
    for name, value in (("tau_out", tau_out), ("tau_e", tau_e), ("tau_a", tau_a)):
        if not value > 0.0:
            raise ConfigurationError(f"{name} must be > 0, got {value!r}")
    kappa_e = (1.0 + beta) / (tau_out * tau_e)
    kappa_a = beta / (tau_out * tau_a)
    if abs(kappa_e - kappa_a) <= 1e-12:
        raise ConfigurationError(
            f"kappa_e == kappa_a ({kappa_e!r}) is unsupported: equal expert and amateur "
            "weights fall outside the (beta, tau_out) parameterization"
        )
    return kappa_e, kappa_a


def scaled_mask_alpha(alpha: float, tau: float) -> float:
    """Alpha adjustment that keeps the mask invariant when logits are divided by tau.

    alpha_mask_logits(e / tau, alpha ** (1 / tau)) == alpha_mask_logits(e, alpha):
    the mask depends only on tau * log(alpha).
    """
    _check_alpha(alpha)
    if not tau > 0.0:
        raise ConfigurationError(f"tau must be > 0, got {tau!r}")
    return float(alpha ** (1.0 / tau))

"""Exception hierarchy shared by all cdkit modules.

The CLI maps these onto exit codes: usage/configuration problems exit 1,
data problems exit 2, internal invariant violations exit 3.
"""


class CdkitError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(CdkitError):
    """A parameter is outside its documented domain (alpha, temperatures, ...)."""


class ValidationError(CdkitError):
    """An input value fails a documented contract (e.g. unnormalized probabilities)."""


class ScorerCompatibilityError(CdkitError):
    """Expert and amateur scorers cannot be paired (vocabulary mismatch etc.)."""


class DegenerateScorerError(CdkitError):
    """A scorer produced a distribution the combination math cannot consume."""


class ScorerProtocolError(CdkitError):
    """An external scorer adapter violated the line protocol or timed out."""


class DataError(CdkitError):
    """A dataset, corpus or result file is missing, empty, or malformed."""


class UsageError(CdkitError):
    """An API or CLI call was made with inconsistent arguments."""


class MetricError(CdkitError):
    """A metric is undefined for the given inputs (e.g. sequence shorter than n)."""


class InternalInvariantError(CdkitError):
    """A condition the engine guarantees was violated; always a bug."""

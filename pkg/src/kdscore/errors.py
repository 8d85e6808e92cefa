"""Exception hierarchy.

Two families matter to callers: :class:`InvalidInput` (malformed data or
arguments, CLI exit code 2) and :class:`DegeneracyError` (the data are valid
but the statistic cannot be formed, CLI exit code 3).
"""


class KdscoreError(Exception):
    """Base class for all package errors."""


class InvalidInput(KdscoreError, ValueError):
    pass


class DimensionMismatch(InvalidInput):
    pass


class InvalidWeights(InvalidInput):
    pass


class InvalidK(InvalidInput):
    pass


class DegenerateFolds(InvalidInput):
    pass


class DomainError(InvalidInput):
    pass


class HalfTooSmall(InvalidInput):
    pass


class DegeneracyError(KdscoreError):
    pass


class DegenerateVariance(DegeneracyError):
    pass


class NearSingularInformation(DegeneracyError):
    pass


class AllZeroWeights(DegeneracyError):
    pass


class UnboundedRisk(DegeneracyError):
    """The weighted surrogate risk (negative weights) has no finite minimiser at this penalty."""


class OverlapViolation(DegeneracyError):
    pass


class InsufficientData(DegeneracyError):
    pass


class NonConvergenceWarning(UserWarning):
    """Raised as a warning: the solver hit its iteration cap before the KKT check passed."""

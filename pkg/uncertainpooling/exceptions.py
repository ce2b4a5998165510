"""
Errors raised by uncertainpooling.

Everything derives from PoolingError so the command line can map
failures to exit codes in one place.
"""


class PoolingError(Exception):
    """Base class; an unexpected numeric failure unless a subclass says otherwise."""
    exit_code = 4


class ValidationError(PoolingError, ValueError):
    """Bad input data or configuration."""
    exit_code = 2


class BoundaryCount(ValidationError):
    """Zero or all events where the effect scale cannot represent them."""


class NotFound(ValidationError, KeyError):
    """Unknown dataset name or study id."""

    def __str__(self):
        # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ''


class DomainError(ValidationError):
    """A numeric argument outside the domain of the operation."""


class ResourceLimit(PoolingError):
    """Problem size beyond the enumeration guards."""
    exit_code = 3


class SingularDesign(PoolingError):
    """Covariate matrix without full column rank."""


class NumericalFailure(PoolingError):
    """Non-finite normalizer or a factorization that failed after jitter."""

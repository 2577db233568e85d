"""Exception types shared across the package."""


class AccuracyError(RuntimeError):
    """A quadrature / series / refinement did not converge to the requested accuracy."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated by the caller."""


class ResourceError(RuntimeError):
    """Requested computation exceeds the configured desk-scale resource caps."""


class DivergenceError(RuntimeError):
    """A numerical solution blew up or produced non-finite values."""


class NotCentredError(ValueError):
    """An observable that must integrate to zero against N(0,1) does not."""


class ConsistencyError(RuntimeError):
    """Two independent routes to the same quantity disagree beyond tolerance."""


class DataError(ValueError):
    """Input data is empty, non-finite or otherwise unusable."""


class RangeError(OverflowError):
    """A result exceeds floating-point range; carries a diagnostic message."""

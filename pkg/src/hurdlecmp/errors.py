"""Exception hierarchy shared across the package."""


class HurdleCmpError(Exception):
    """Base class for all package errors."""


class DivergentSeries(HurdleCmpError, ValueError):
    """The CMP normalizing series does not converge (nu == 0 with lambda >= 1)."""


class TruncationBudgetExceeded(HurdleCmpError, RuntimeError):
    """The tail bound was not met within ``max_terms`` series terms."""


class DomainError(HurdleCmpError, ValueError):
    pass


class LengthMismatch(HurdleCmpError, ValueError):
    pass


class DimensionMismatch(HurdleCmpError, ValueError):
    pass


class SingularCovariance(HurdleCmpError, ArithmeticError):
    pass


class ConvergenceFailure(HurdleCmpError, RuntimeError):
    pass


class InvalidInit(HurdleCmpError, ValueError):
    """The log target is -inf at the initial parameter vector."""


class AuxiliarySamplingFailure(HurdleCmpError, RuntimeError):
    pass


class AllOnesOrAllZeros(HurdleCmpError, ValueError):
    """Binary outcome vector has no variation."""


class EmptyPositiveSet(HurdleCmpError, ValueError):
    pass


class NonFiniteDeviance(HurdleCmpError, ArithmeticError):
    pass


class InsufficientDraws(HurdleCmpError, ValueError):
    pass


class TraceTooShort(HurdleCmpError, ValueError):
    pass


class SchemaViolation(HurdleCmpError, ValueError):
    """Input data does not satisfy the declared dataset schema.

    ``rows`` lists the offending 1-based data row numbers, when known.
    """

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = list(rows or [])


class ConfigError(HurdleCmpError, ValueError):
    pass


class HurdleFitError(HurdleCmpError, RuntimeError):
    """One or both hurdle components failed.

    ``partial`` holds the :class:`HurdleFit` with whichever component
    chains succeeded; ``errors`` maps component name to the exception.
    """

    def __init__(self, message, partial=None, errors=None):
        super().__init__(message)
        self.partial = partial
        self.errors = dict(errors or {})

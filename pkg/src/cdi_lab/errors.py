"""Exception hierarchy shared by every cdi_lab module."""


class CdiLabError(Exception):
    """Base class for all library errors."""


class InvalidMeasureError(CdiLabError, ValueError):
    pass


class DomainError(CdiLabError, ValueError):
    pass


class ContractError(CdiLabError, ValueError):
    pass


class UnsupportedMeasureError(CdiLabError, ValueError):
    pass


class QuadratureError(CdiLabError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance.

    The best available estimate and its error bound are kept on the
    exception so callers can decide whether to accept them.
    """

    def __init__(self, message, estimate, error):
        super().__init__(f"{message} (estimate={estimate!r}, error={error!r})")
        self.estimate = estimate
        self.error = error


class NumericalInconsistencyError(CdiLabError, ArithmeticError):
    pass


class CriteriaDisagreementError(CdiLabError):
    def __init__(self, message, schweinsberg, grey):
        super().__init__(message)
        self.schweinsberg = schweinsberg
        self.grey = grey


class TailNotResolvedError(CdiLabError, ArithmeticError):
    pass


class RangeError(CdiLabError, ValueError):
    pass


class SamplingError(CdiLabError, RuntimeError):
    pass


class EnumerationLimitError(CdiLabError, ValueError):
    pass


class BoundViolationError(CdiLabError, ArithmeticError):
    pass

"""Exception types raised by the integrators and drivers."""


class KahanCdcError(Exception):
    """Base class for all library errors."""


class ValidationError(KahanCdcError, ValueError):
    """Invalid configuration, parameters or input shapes."""


class DomainError(KahanCdcError, ValueError):
    """State outside the domain of an observable (e.g. log of a non-positive density)."""


class NumericalError(KahanCdcError, ArithmeticError):
    """A step or solve failed numerically."""


class StepFailure(NumericalError):
    """A one-step method could not produce a finite next state."""

    def __init__(self, message, *, dt=None, state=None, index=None):
        super().__init__(message)
        self.dt = dt
        self.state = state
        self.index = index


class NewtonDivergence(NumericalError):
    def __init__(self, message, *, iterations=None, residual=None, index=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.index = index

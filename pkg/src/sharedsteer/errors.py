"""Exception hierarchy shared by the simulator and analysis modules."""


class SharedSteerError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SharedSteerError, ValueError):
    """A parameter set violates its invariants."""


class StateValidityError(SharedSteerError, ValueError):
    """A vehicle state contains non-finite values."""


class PlantDivergenceError(SharedSteerError, ArithmeticError):
    """A closed-loop run produced a non-finite state."""


class InsufficientDataError(SharedSteerError, ValueError):
    """A metric was asked for on a log too short to define it."""


class SingularDesignError(SharedSteerError, ArithmeticError):
    """Least-squares design matrix is rank deficient."""

    def __init__(self, message, collinear_terms=()):
        super().__init__(message)
        self.collinear_terms = tuple(collinear_terms)


class UndefinedCpError(SharedSteerError, ArithmeticError):
    """Mallows Cp has no finite value (zero residual variance in the full model)."""


class NoInteriorOptimumError(SharedSteerError, ArithmeticError):
    """The quadratic surface has a singular Hessian."""

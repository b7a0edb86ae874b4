"""Exception and warning types raised across the package."""


class NlfracError(Exception):
    """Base class for all package errors."""


class GridError(NlfracError, ValueError):
    """Invalid grid or region specification, or mismatched grids."""


class ParameterError(NlfracError, ValueError):
    """Invalid model parameters (s, m, K, coefficient layout)."""


class CoercivityError(NlfracError, ValueError):
    """Negative potential: the interior operator is no longer positive definite."""


class ConvergenceError(NlfracError, RuntimeError):
    """An iterative method failed to reach its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ContractionError(ConvergenceError):
    """The fixed-point iterate left the contraction ball."""


class ConsistencyError(NlfracError, RuntimeError):
    """An internal algebraic consistency check failed."""


class LocalizationError(NlfracError, RuntimeError):
    """Bump family cannot localize the unknowns (rank deficiency)."""


class BudgetError(NlfracError, RuntimeError):
    """Error budget exceeded the configured ceiling."""


class ContractionRegimeWarning(UserWarning):
    """Exterior data is larger than the configured smallness bound."""


class StandingAssumptionWarning(UserWarning):
    """floor(s) > max(m, dim/2) does not hold."""

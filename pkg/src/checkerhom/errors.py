"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A lattice/solver/CLI configuration violates its invariants."""


class DenseSizeError(RuntimeError):
    """Refusal to densify an operator above the configured size cap."""


class QuadratureFailure(RuntimeError):
    """Exponential-sum quadrature could not reach the requested tolerance.

    Carries the best achieved sup error and the rank at which it occurred.
    """

    def __init__(self, message, best_error, rank):
        super().__init__(message)
        self.best_error = best_error
        self.rank = rank


class SolverBreakdown(RuntimeError):
    """Non-finite residual encountered during the iteration."""


class SolverDidNotConverge(RuntimeError):
    """A solve exhausted max_iter; carries the report and run metadata."""

    def __init__(self, message, report=None, metadata=None):
        super().__init__(message)
        self.report = report
        self.metadata = dict(metadata or {})


class InsufficientData(ValueError):
    """Not enough data points for the requested statistical fit."""

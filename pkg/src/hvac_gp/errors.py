"""Exception hierarchy shared by the package."""


class HvacGpError(Exception):
    """Base class for all package errors."""


class NumericDomainError(HvacGpError, ArithmeticError):
    """A computation produced a non-finite value."""


class IllConditionedKernelError(HvacGpError, ArithmeticError):
    """Cholesky factorization of the Gram matrix failed after all jitter retries."""

    def __init__(self, message: str, jitter: float):
        super().__init__(message)
        self.jitter = jitter


class DivergedOptimizationError(HvacGpError, ArithmeticError):
    """The training loss became non-finite."""


class SimulatorDivergenceError(HvacGpError, RuntimeError):
    """Zone temperature left the simulator sanity bounds."""


class NoValidTrajectoryError(HvacGpError, ValueError):
    """Every MPPI score was -inf."""


class ValidationError(HvacGpError, ValueError):
    """Input data violates a documented invariant."""


class ConfigError(HvacGpError, ValueError):
    """Bad configuration or missing artifact."""

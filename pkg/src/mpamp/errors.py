"""Exception hierarchy shared by all mpamp modules."""


class MpampError(Exception):
    """Base class for every error raised by this package."""


class DomainError(MpampError, ValueError):
    """An argument lies outside the domain of an operation."""


class NumericalError(MpampError, ArithmeticError):
    """A numerical routine failed to reach its accuracy target."""


class ConvergenceError(NumericalError):
    """An iterative routine hit its iteration cap."""


class DivergenceError(NumericalError):
    """An AMP run blew up; ``trace`` holds the per-iteration MSE so far."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)


class InfeasibleError(MpampError):
    """The requested final-MSE target cannot be reached."""


class HorizonCapError(MpampError):
    """The dynamic program did not stabilize within ``max_horizon``."""


class GridCoverageError(MpampError):
    """A forward pass left the discretized state grid."""


class ConfigError(MpampError):
    """Invalid experiment configuration."""

"""Exception hierarchy shared by the numerical modules and the runner."""


class AnosovLabError(Exception):
    """Base class."""


class ParameterError(AnosovLabError, ValueError):
    """A parameter violates a documented constraint."""


class NumericalError(AnosovLabError, ArithmeticError):
    """A numerical procedure failed (integration, convergence, conditioning)."""


class IntegrationError(NumericalError):
    def __init__(self, message, time_reached=None):
        super().__init__(message)
        self.time_reached = time_reached


class SplittingError(NumericalError):
    pass


class GraphBlowupError(NumericalError):
    pass


class CoveringError(NumericalError):
    pass


class ConfigError(AnosovLabError):
    """Invalid or unreadable experiment configuration."""

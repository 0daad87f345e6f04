"""Exception hierarchy shared by the detectors and the harness."""


class RelaySenseError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RelaySenseError, ValueError):
    """Inconsistent dimensions or invalid configuration values."""


class DomainError(RelaySenseError, ValueError):
    """An argument lies outside the domain of the requested quantity."""


class DegenerateModelError(RelaySenseError):
    """The two hypotheses cannot be told apart by the requested statistic."""


class SeriesInstabilityError(RelaySenseError, ArithmeticError):
    """A Laguerre coefficient recurrence produced a non-finite value."""

    def __init__(self, message, k=None):
        super().__init__(message)
        self.k = k


class DivergenceError(RelaySenseError, ArithmeticError):
    """An iterative solver produced a non-finite iterate."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class SaddleError(RelaySenseError):
    """The Hessian at a stationary point is not negative definite."""


class ScenarioError(RelaySenseError, ValueError):
    """A Monte Carlo scenario is inconsistent with the chosen detector."""

"""Exception types raised across the package."""


class VivError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(VivError, ValueError):
    """A physical parameter is outside its admissible range."""


class DivergenceError(VivError, ArithmeticError):
    """The plant state blew up (non-finite values or |q| over the guard)."""


class IdentificationError(VivError):
    """Free-decay identification could not find enough peaks."""


class CalibrationError(VivError):
    """No candidate parameter set met the calibration tolerance.

    ``best`` holds the closest candidate and ``report`` the per-target
    errors so a caller can still inspect what was found.
    """

    def __init__(self, message, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report or {}


class CommandError(VivError, ValueError):
    """An actuator command was non-finite."""


class SchedulingError(VivError):
    """A command was issued off the hold grid."""


class ShapeError(VivError, ValueError):
    """Array dimensions do not match the network layout."""


class TrainingError(VivError):
    """Optimization produced non-finite values."""


class NoDominantFrequencyError(VivError):
    """The signal carries no oscillatory content."""


class ConfigError(VivError, ValueError):
    """The experiment configuration is malformed."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = list(keys)

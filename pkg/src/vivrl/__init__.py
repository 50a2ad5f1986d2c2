"""Reduced-order VIV surrogate with rotary actuation, a from-scratch PPO
agent and the sinusoidal lock-on baseline."""
from .errors import (CalibrationError, CommandError, ConfigError, DivergenceError, IdentificationError,
                     NoDominantFrequencyError, ParameterDomainError, SchedulingError, ShapeError,
                     TrainingError, VivError)
from .records import RunRecord

__version__ = "0.1.0"

"""Exception hierarchy shared by every thetaflow module."""


class ThetaflowError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ThetaflowError):
    """Bad grid, shape or run configuration."""


class ParameterError(ConfigurationError):
    """Physical parameters outside the admissible range."""


class PreconditionError(ThetaflowError, ValueError):
    """An operator was applied outside its domain (e.g. nonzero mean for a negative power)."""


class StateError(ThetaflowError):
    """A state lost positivity or came too close to vacuum."""


class CheckpointError(ThetaflowError):
    """Checkpoint file is corrupt, truncated or of an unknown version."""


class BlowupError(ThetaflowError):
    """Raised by the integrator when a step produces an invalid state.

    ``state`` and ``t`` hold the last valid state and its time.
    """

    def __init__(self, reason, state=None, t=None):
        super().__init__(reason)
        self.reason = reason
        self.state = state
        self.t = t


class OutOfRangeWarning(UserWarning):
    """A dyadic index outside the filter bank was requested."""

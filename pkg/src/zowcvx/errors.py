"""Exception hierarchy shared by all modules."""

import numpy as np


class ZowcvxError(Exception):
    """Base class for every error raised by this package."""


class EstimatorFailure(ZowcvxError):
    """An oracle returned a non-finite value while building an estimate."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = None if point is None else np.array(point, copy=True)


class ScheduleViolation(ZowcvxError):
    """Step size or smoothing radii break a required inequality."""


class CapabilityError(ZowcvxError):
    """A solver needs a problem capability that was not provided."""


class SubproblemError(ZowcvxError):
    """An exact single-sample subproblem could not be solved."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NonconvergenceError(ZowcvxError):
    """An inner solve ran out of budget above its tolerance."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class IllPosedError(ZowcvxError):
    """The proximal parameter does not dominate the weak-convexity modulus."""


class UnsupportedDimension(ZowcvxError):
    """Brute-force checks only run in one or two dimensions."""


class ConfigError(ZowcvxError):
    """Invalid experiment configuration."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class SolverError(ZowcvxError):
    """A run aborted; ``record`` holds the partial trajectory."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record

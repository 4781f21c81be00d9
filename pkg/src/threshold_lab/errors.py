"""Exception types shared across the lab."""


class ThresholdLabError(Exception):
    """Base class for all errors raised by this package."""


class AccuracyError(ThresholdLabError):
    """A numerical result failed its self-convergence or tolerance check."""


class ValidationError(ThresholdLabError):
    """An input violated one of the standing model assumptions."""


class DegenerateInputError(ThresholdLabError):
    """An input is degenerate (e.g. an identically zero potential)."""


class BracketError(ThresholdLabError):
    """A root/threshold search failed to bracket a sign change."""


class FitError(ThresholdLabError):
    """A potential fit exceeded its residual tolerance."""


class BasisError(ThresholdLabError):
    """A variational basis is unusable (non-SPD form or empty after regularization)."""


class ConfigError(ThresholdLabError):
    """A configuration file failed to parse or validate."""

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line

"""
Errors Module

Exception hierarchy shared by the backend. Every error derives from
EbpError and from the closest builtin, so callers can catch either.
"""


class EbpError(Exception):
    """Base class for all library errors."""


class InvalidStateError(EbpError, ValueError):
    """Object state or quaternion contains non-finite or degenerate values."""


class InvalidTrajectoryError(EbpError, ValueError):
    """Trajectory too short to carry any transition energy."""


class InvalidEpisodeError(EbpError, ValueError):
    """Episode arrays have inconsistent lengths."""


class EmptyBufferError(EbpError, ValueError):
    """Sampling was requested from an empty buffer."""


class NoFutureGoalError(EbpError, ValueError):
    """No strictly future achieved goal exists for relabeling."""


class InvalidPriorityError(EbpError, ValueError):
    """Priority or TD error is negative or non-finite."""


class ShapeError(EbpError, ValueError):
    """Array dimensions do not match what the network or env expects."""


class TreeIndexError(EbpError, IndexError):
    """Sum-tree leaf index out of range."""


class PrefixRangeError(EbpError, ValueError):
    """Sum-tree prefix value outside [0, total)."""


class TrainingDivergenceError(EbpError, ArithmeticError):
    """Loss or gradient became non-finite."""


class UndefinedCorrelationError(EbpError, ValueError):
    """Pearson r requested on data with zero variance."""


class ConfigError(EbpError, ValueError):
    """Run configuration is malformed or contains unknown keys."""

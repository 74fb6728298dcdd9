"""Exception hierarchy shared by every module."""


class MatchingError(Exception):
    """Base class for all errors raised by this package."""


class OutOfBounds(MatchingError, ValueError):
    pass


class InvalidCellSize(MatchingError, ValueError):
    pass


class DegenerateBox(MatchingError, ValueError):
    pass


class DuplicateId(MatchingError, ValueError):
    pass


class EmptyNetwork(MatchingError, ValueError):
    pass


class UnknownSegment(MatchingError, KeyError):
    pass


class ShapeMismatch(MatchingError, ValueError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class NotScalar(MatchingError, ValueError):
    pass


class DetachedLoss(MatchingError, ValueError):
    pass


class MissingCandidate(MatchingError, ValueError):
    pass


class NoValidCandidate(MatchingError, ValueError):
    pass


class NoCandidates(MatchingError, ValueError):
    pass


class MissingGroundTruth(MatchingError, ValueError):
    pass


class EmptyTrajectory(MatchingError, ValueError):
    pass


class InsufficientExperience(MatchingError, ValueError):
    pass


class NonFiniteLoss(MatchingError, FloatingPointError):
    pass


class TooLarge(MatchingError, ValueError):
    pass


class LengthMismatch(MatchingError, ValueError):
    pass


class DataError(MatchingError, ValueError):
    """Malformed input data."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class NonMonotoneTime(DataError):
    def __init__(self, traj_id):
        super().__init__(f"timestamps not increasing in trajectory {traj_id!r}")
        self.traj_id = traj_id


class TooSmall(DataError):
    pass


class ConfigError(MatchingError, ValueError):
    pass


class RuntimeFailure(MatchingError, RuntimeError):
    """A command failed for a reason other than configuration or input data."""

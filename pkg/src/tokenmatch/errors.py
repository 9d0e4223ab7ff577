"""Exception hierarchy shared across the package."""


class TokenMatchError(Exception):
    """Base class for all package errors."""


class ShapeError(TokenMatchError):
    """Tensor shape or divisibility violation."""


class InputError(TokenMatchError):
    """Invalid input data (NaN labels, non-binary categorical targets, ...)."""


class ConfigError(TokenMatchError):
    """Invalid or inconsistent configuration."""


class RegistrationError(TokenMatchError):
    """Task references an unknown dataset or group."""


class ResolutionMismatchError(TokenMatchError):
    """Task parameter tables do not match the input token grid."""


class CheckpointError(TokenMatchError):
    """Checkpoint read/write failure (integrity, version, missing pieces)."""


class SamplerError(TokenMatchError):
    """Episode sampling could not be satisfied by the manifest."""


class TrainStepError(TokenMatchError):
    """A training step was aborted (non-finite loss, ...)."""


class UndefinedMetricError(TokenMatchError):
    """Metric is undefined for the given ground truth (e.g. empty)."""


class NoPoseError(TokenMatchError):
    """Pose could not be estimated from the available correspondences."""

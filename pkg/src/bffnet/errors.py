"""Exception types shared across the package."""


class BffnetError(Exception):
    """Base class for every error raised by this package."""


class DecodeError(BffnetError):
    """An image or mask file could not be read or decoded."""


class ShapeMismatch(BffnetError):
    """Image and mask spatial dimensions disagree."""


class InvalidTarget(BffnetError):
    """Resize target is not a valid encoder input size."""


class InvalidScale(BffnetError):
    """Scale factor outside the allowed multiscale set."""


class ShapeError(BffnetError):
    """Tensor shape violates an operation's contract."""


class ConfigError(BffnetError):
    """Inconsistent or unsupported configuration."""


class FormatError(BffnetError):
    """Checkpoint file is corrupt or not a checkpoint at all."""


class VersionError(BffnetError):
    """Checkpoint version or embedded config is incompatible."""


class CheckpointError(BffnetError):
    """Checkpoint could not be used for evaluation."""


class DataError(BffnetError):
    """Dataset manifest or its files are invalid."""

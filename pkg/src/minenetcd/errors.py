"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class StateError(RuntimeError):
    """An operation was invoked in an invalid engine state (e.g. double backward)."""


class ConfigError(ValueError):
    """Invalid or malformed experiment configuration."""


class DataError(ValueError):
    """Dataset files are missing, malformed, or inconsistent."""


class NumericError(ArithmeticError):
    """A non-finite value was produced where finiteness is required."""


class CheckpointError(ValueError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """File is not a recognizable checkpoint container."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is unsupported."""


class CheckpointTruncatedError(CheckpointError):
    """Checkpoint payload ends before the manifest says it should."""


class CheckpointShapeError(CheckpointError):
    """A stored parameter does not match the target model's shape."""

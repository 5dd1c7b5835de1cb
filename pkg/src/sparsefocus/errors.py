"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or image dimensions are incompatible with an operation."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


class EmptySelectionError(ValueError):
    """An aggregate was requested over an empty collection of patches."""


class UsageError(RuntimeError):
    """An API was called in a way its contract forbids."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


class CheckpointError(IOError):
    """A checkpoint file is malformed or does not match the model."""

"""Exception types shared across the toolkit."""


class TgafError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(TgafError, ValueError):
    """Raised when tensor shapes are incompatible for an operation."""

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class ConfigurationError(TgafError, ValueError):
    """Raised for invalid model, layer or training configuration."""


class CheckpointFormatError(TgafError):
    """Raised when a checkpoint file is malformed or truncated."""


class UnsupportedVersionError(CheckpointFormatError):
    """Raised when a checkpoint was written by an unknown format version."""


class DataFormatError(TgafError):
    """Raised for malformed video files or inconsistent frame data."""


class NumericalError(TgafError, ArithmeticError):
    """Raised when training produces a non-finite loss."""

"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible for an operation."""


class ConfigError(ValueError):
    """Invalid configuration or arguments (maps to CLI exit code 2)."""


class FormatError(ValueError):
    """Malformed or truncated binary file."""


class UsageError(RuntimeError):
    """API misuse, e.g. calling backward on a tensor that is not on the tape."""


class NumericalError(FloatingPointError):
    """A non-finite value appeared where only finite values are allowed."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch

"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes do not line up (kernel larger than input, length mismatch, ...)."""


class StateError(RuntimeError):
    """A backward pass was given a cache that does not belong to it."""


class NumericError(ArithmeticError):
    """Non-finite values showed up where finite ones are required."""


class ConfigurationError(ValueError):
    """A model or latent configuration admits no valid solution."""


class FormatError(ValueError):
    """A binary file is corrupt. ``offset`` is the byte where reading failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset

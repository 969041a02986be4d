"""Exception types shared across the package."""


class WassregError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(WassregError, ValueError):
    pass


class DegenerateMetricError(WassregError, ArithmeticError):
    """The Laplacian has more than the expected one-dimensional null space."""


class DomainError(WassregError, ValueError):
    pass


class DataFormatError(WassregError):
    """Malformed dataset or checkpoint file.

    ``offset`` is the byte offset (binary formats) or line number (text
    formats) where the problem was detected, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(WassregError):
    pass


class DivergenceError(WassregError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}

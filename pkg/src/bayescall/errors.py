"""Exception types shared across the package."""


class BayescallError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BayescallError, ValueError):
    """A parameter or configuration value is invalid."""


class EmptyInputError(BayescallError, ValueError):
    """An operation received an empty input where at least one item is required."""


class DegenerateDatasetError(BayescallError, ValueError):
    """A dataset cannot support the requested operation (e.g. a class is absent)."""


class RangeError(BayescallError, ValueError):
    """A value lies outside its permitted range."""


class ShapeError(BayescallError, ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class NumericError(BayescallError, ArithmeticError):
    """A computation produced or received non-finite values."""


class FormatError(BayescallError, ValueError):
    """A serialized payload is malformed; message carries the byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset

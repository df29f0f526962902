"""Exception hierarchy shared across the package.

The CLI maps :class:`ValidationError` to exit code 2 and
:class:`NumericalError` to exit code 3.
"""


class AceError(Exception):
    """Base class for all package errors."""


class ValidationError(AceError, ValueError):
    """Rejected input: wrong shape, bad schema, inconsistent arguments."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DimensionError(ValidationError):
    """Array or state dimensions do not match what the model expects."""


class DegenerateFrameError(AceError, ValueError):
    """The facing direction is (near) vertical, so no heading frame exists."""


class TapeError(AceError, RuntimeError):
    """Misuse of the autodiff tape (foreign node, missing double recording)."""


class NumericalError(AceError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class ParseError(ValidationError):
    """Malformed text input (BVH and friends); carries the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

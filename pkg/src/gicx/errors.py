"""Error taxonomy shared across the package.

Callers can catch the base class GicxError, or the specific category when the
distinction matters (the CLI maps categories to exit codes).
"""


class GicxError(Exception):
    """Base class for all package errors."""


class DimensionError(GicxError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ParameterError(GicxError, ValueError):
    """A configuration value or argument is outside its legal range."""


class ContractError(GicxError, RuntimeError):
    """An API precondition was violated (e.g. missing gradient, unfit model)."""


class FormatError(GicxError, ValueError):
    """A serialized blob (tensor snapshot, checkpoint, bitstream) is malformed."""


class DecodeError(GicxError, ValueError):
    """An entropy-coded payload cannot be decoded (truncation or corruption)."""


class NumericError(GicxError, ArithmeticError):
    """A numeric invariant failed (NaN/Inf where finite values are required)."""

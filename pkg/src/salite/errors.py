"""Exception taxonomy shared across the package.

Exit-code mapping used by the CLI: validation problems (dimensions, config,
bad flags) exit 1, file/format problems exit 2, numeric problems exit 3.
"""


class SaliteError(Exception):
    """Base class for all package errors."""


class DimensionError(SaliteError, ValueError):
    """Shape or size mismatch. Messages name both offending values."""


class NumericError(SaliteError, ArithmeticError):
    """Non-finite values or failed numeric checks."""


class ParseError(SaliteError, ValueError):
    """Malformed binary or text input. Carries a byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(SaliteError, ValueError):
    """Bad configuration key, value, or file line."""


class CheckpointError(SaliteError, ValueError):
    """Base class for checkpoint problems; subclasses are distinct kinds."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class TensorMismatchError(CheckpointError):
    """Unknown tensor name or dimension mismatch against the current model."""

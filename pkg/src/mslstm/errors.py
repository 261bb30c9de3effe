"""Exception types shared across the package."""


class MSLSTMError(Exception):
    """Base class for all package errors."""

    code = "error"


class ShapeError(MSLSTMError, ValueError):
    """Operands have incompatible shapes, dtypes, or spatial sizes."""

    code = "shape"


class ConfigError(MSLSTMError, ValueError):
    """A configuration value is invalid (unknown preset, even kernel, ...)."""

    code = "config"


class FormatError(MSLSTMError, ValueError):
    """A file does not follow its declared binary or text format."""

    code = "format"


class DataIOError(MSLSTMError, OSError):
    """Reading or writing data failed (truncation, unwritable path, ...)."""

    code = "io"


class UsageError(MSLSTMError, ValueError):
    """An API or CLI call violates its contract."""

    code = "usage"


class NumericsError(MSLSTMError, ArithmeticError):
    """A computation produced non-finite values."""

    code = "numerics"

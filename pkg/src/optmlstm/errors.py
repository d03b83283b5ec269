"""Exception hierarchy shared by every module."""


class OptmError(Exception):
    """Base class for all package errors."""


class ShapeError(OptmError, ValueError):
    """Operands have incompatible shapes."""


class ConfigError(OptmError, ValueError):
    """A configuration or statistic is unusable."""


class NumericError(OptmError, ArithmeticError):
    """A computation produced non-finite values."""


class ParseError(OptmError, ValueError):
    """Input file does not follow the expected format."""


class ValidationError(OptmError, ValueError):
    """A record violates a domain invariant."""


class StateError(OptmError, RuntimeError):
    """An object was used before it was initialized."""

"""Exception types shared across the package."""


class GDFQError(Exception):
    """Base class for all package errors."""


class DimensionError(GDFQError, ValueError):
    """Operand shapes do not agree."""


class ContractError(GDFQError, ValueError):
    """A precondition on an argument was violated."""


class NumericError(GDFQError, ArithmeticError):
    """A non-finite value appeared, or a numeric parameter is unusable."""


class DegenerateRangeError(GDFQError, ValueError):
    """Clip range with ``u <= l`` or values with zero spread."""


class BitwidthError(GDFQError, ValueError):
    """Bitwidth below the supported minimum."""


class RangeError(GDFQError, ValueError):
    """Integer code outside the representable k-bit range."""


class BNSUnavailableError(GDFQError, ValueError):
    """The model has no batch-norm layers to match statistics against."""


class ConfigError(GDFQError, ValueError):
    """Invalid or conflicting configuration."""


class UnsupportedTaskError(GDFQError, ValueError):
    """Operation not defined for this task (e.g. scatter export on non-2D input)."""


class CheckpointError(GDFQError, ValueError):
    """Malformed or incompatible checkpoint file."""

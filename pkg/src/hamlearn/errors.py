"""Exception types raised across the package."""


class HamlearnError(Exception):
    """Base class for all package errors."""


class DimensionError(HamlearnError, ValueError):
    """Shapes or lengths do not conform."""


class NumericError(HamlearnError, ArithmeticError):
    """Non-finite values or a violated numerical consistency check."""


class DomainError(HamlearnError, ValueError):
    """An argument lies outside the domain of the operation."""


class ContractViolation(HamlearnError, ValueError):
    """A documented precondition on an input (Hermiticity, unitarity) fails."""


class ResourceError(HamlearnError, RuntimeError):
    """The requested computation exceeds a configured size cap."""


class ParseError(HamlearnError, ValueError):
    """Malformed dataset or configuration file.

    Attributes:
        lineno: 1-based line number of the offending line, if known.
    """

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)

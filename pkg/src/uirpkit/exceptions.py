"""Exception hierarchy shared by every module."""


class UirpkitError(Exception):
    """Base class for all package errors."""


class InvalidParameters(UirpkitError, ValueError):
    pass


class DimensionMismatch(UirpkitError, ValueError):
    pass


class NonInvertible(UirpkitError, ArithmeticError):
    """A matrix that must be inverted is singular or too ill-conditioned."""


class RankDeficient(UirpkitError, ArithmeticError):
    pass


class InsufficientData(UirpkitError, ValueError):
    pass


class SchemaError(UirpkitError, ValueError):
    pass


class ParseError(UirpkitError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class InvariantViolation(UirpkitError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class EmptyPortfolio(UirpkitError, ValueError):
    pass


class EmptyMonth(UirpkitError, ValueError):
    pass

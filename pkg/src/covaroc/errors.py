"""Exception hierarchy shared by every covaroc module."""


class CovarocError(Exception):
    """Base class for all errors raised by covaroc."""


class ConfigurationError(CovarocError, ValueError):
    """A setting, option or predicate refers to something invalid."""


class MalformedInputError(CovarocError, ValueError):
    """Array shapes or lengths do not agree."""


class PreconditionError(CovarocError, ValueError):
    """An operation was called on input it cannot handle (e.g. empty data)."""


class SchemaError(CovarocError, ValueError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"missing required column {column!r}")


class RowError(CovarocError, ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class EmptyDatasetError(PreconditionError):
    pass


class DegenerateDimensionError(PreconditionError):
    def __init__(self, dimension, message=None):
        self.dimension = dimension
        super().__init__(message or f"dimension {dimension!r} has zero variance")


class DegenerateRangeError(PreconditionError):
    pass


class EmptyBasisError(PreconditionError):
    pass


class DegenerateOracleError(PreconditionError):
    pass


class NumericError(CovarocError, ArithmeticError):
    """Numerical failure; ``snapshot`` carries the offending state when known."""

    def __init__(self, message, snapshot=None):
        self.snapshot = snapshot
        super().__init__(message)

"""Exception hierarchy shared across the package."""


class PrefmoeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(PrefmoeError):
    """Feature vector length does not match the model's declared dimension."""

    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"feature dimension mismatch: expected d={expected}, got d={actual}")


class DataFormatError(PrefmoeError):
    """Malformed dataset file. Carries 1-based row/column of the offending cell."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        self.row = row
        self.column = column
        where = ""
        if row is not None:
            where = f" (row {row}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)


class RuleParseError(PrefmoeError):
    """Rules file does not conform to the rule grammar."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(PrefmoeError):
    """Rule references a feature absent from the bound dataset schema."""


class ModelFormatError(PrefmoeError):
    """Model file is unreadable: bad version, truncation, or non-finite values."""


class MetricError(PrefmoeError):
    """Metric is undefined for the given inputs (e.g. AUC with a single class)."""


class SolverError(PrefmoeError):
    """Training aborted; message names the failing component."""


class InfeasibleInitError(SolverError):
    """Warm start violates the performance constraint of the constrained step."""


class ProjectionInfeasibleError(SolverError):
    """No gate vector satisfies the loss constraint at the current expert parameters."""

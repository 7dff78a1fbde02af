"""Exception hierarchy.

Each error class carries the CLI exit code it maps to so the command-line
layer never needs a lookup table.
"""


class FasmError(Exception):
    exit_code = 1


class ConfigError(FasmError, ValueError):
    """Invalid configuration or flag value."""

    exit_code = 2


class DataError(FasmError, ValueError):
    exit_code = 3


class SchemaError(DataError):
    """A required column or roster variable is missing."""


class ParseError(DataError):
    """A value in an input file could not be parsed."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class SplitError(DataError):
    pass


class MetricUndefinedError(DataError):
    """No comparable pairs (or no cases/controls) for a ranking metric."""


class CrossMetricError(MetricUndefinedError):
    """Cross-group metrics need at least two groups."""


class NumericalError(FasmError, ArithmeticError):
    exit_code = 4


class ObjectiveError(NumericalError):
    pass


class DegenerateDesignError(NumericalError):
    def __init__(self, column):
        super().__init__(f"covariate {column!r} is constant; the design is degenerate")
        self.column = column


class SeparationError(NumericalError):
    """Monotone likelihood: a coefficient diverges."""


class ConditioningError(NumericalError):
    pass


class SamplingExhaustedError(NumericalError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or {}


class SelectionError(NumericalError):
    pass


class ProfileError(FasmError, ValueError):
    """A fairness profile violates its invariants (e.g. a negative metric)."""

    exit_code = 4

"""Exception hierarchy shared by the toolkit.

Each family maps onto one CLI exit code: configuration problems exit 1,
data problems exit 2 and training failures exit 3.
"""


class RiskStabError(Exception):
    """Base class for every error raised by riskstab."""

    exit_code = 1


class ConfigurationError(RiskStabError, ValueError):
    """Invalid model, DGP, experiment or config-file settings."""

    exit_code = 1


class DataError(RiskStabError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class SizeError(DataError):
    """A requested sample size is incompatible with the data."""


class DegenerateFeatureError(DataError):
    """A training column has zero variance and cannot be standardized."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"feature column {column!r} has zero variance in the training data")


class ParseError(DataError):
    """A CSV file could not be parsed; carries the offending location."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class ShapeError(DataError):
    """Array dimensions do not match what a model expects."""


class JoinError(DataError):
    """Prediction matrices, labels or metadata do not line up."""


class InsufficientRunsError(DataError):
    """A stability metric needs at least two pipeline instantiations."""


class TrainingError(RiskStabError):
    exit_code = 3


class ConvergenceError(TrainingError):
    """The L-BFGS line search failed; ``diagnostics`` holds the last iterate state."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class TrainingDivergedError(TrainingError):
    def __init__(self, epoch, run_index=None):
        self.epoch = epoch
        self.run_index = run_index
        where = f" (run {run_index})" if run_index is not None else ""
        super().__init__(f"training diverged at epoch {epoch}{where}: loss is not finite")

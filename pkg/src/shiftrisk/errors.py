"""Exception and warning types shared across the package.

Exceptions are grouped into three families so the CLI can map them to
stable exit codes: configuration errors (exit 2), data errors (exit 3)
and numeric failures (exit 4).
"""

from __future__ import annotations


class ShiftRiskError(Exception):
    """Base class for all package-specific errors."""


# --- configuration errors (CLI exit code 2) ---------------------------------


class ConfigError(ShiftRiskError):
    """A configuration value violates its contract."""


class PartitionError(ConfigError):
    """The mutable/immutable column split is invalid (overlap, empty W, ...)."""


# --- data errors (CLI exit code 3) -------------------------------------------


class DataError(ShiftRiskError):
    """Base class for ingestion and validation failures."""


class ParseError(DataError):
    """A cell failed to parse under its declared type."""

    def __init__(self, row: int, column: str, message: str = ""):
        self.row = row
        self.column = column
        detail = f": {message}" if message else ""
        super().__init__(f"row {row}, column {column!r} failed to parse{detail}")


class SchemaMismatch(DataError):
    """File header does not match the declared schema."""


class EmptyDataset(DataError):
    """The file contains a header but no data rows."""


class DomainError(DataError):
    """A value lies outside the domain required by an operation."""


class InsufficientData(DataError):
    """Too few rows to satisfy an estimator precondition."""


class EmptySubsample(DataError):
    """A report was requested on an empty worst-case subsample."""


# --- numeric failures (CLI exit code 4) --------------------------------------


class NumericError(ShiftRiskError):
    """Base class for numerical failures."""


class DimensionMismatch(NumericError):
    """Array shapes are inconsistent with the fitted model or operation."""


class SingularSystem(NumericError):
    """A regularized linear solve failed or produced non-finite values."""


# --- warnings -----------------------------------------------------------------


class ShiftRiskWarning(UserWarning):
    """Base class for package warnings."""


class ConvergenceWarning(ShiftRiskWarning):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class DegenerateColumnWarning(ShiftRiskWarning):
    """A column intended for spline expansion was constant and passed through."""


class DegenerateQuantileWarning(ShiftRiskWarning):
    """Conditional quantile fitting is ill-posed (constant targets, no noise)."""


class DiscreteMutablesWarning(ShiftRiskWarning):
    """All mutable columns are discrete but no smoothing noise was requested."""

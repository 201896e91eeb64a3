"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so that per-row failure
records and CLI diagnostics can refer to it without parsing messages.
"""

from __future__ import annotations


class ReviewFlowError(Exception):
    code = "error"


# --- tables -----------------------------------------------------------------


class DuplicateColumnError(ReviewFlowError):
    code = "duplicate_column"


class LengthMismatchError(ReviewFlowError):
    code = "length_mismatch"


class ColumnMissingError(ReviewFlowError):
    code = "column_missing"


# --- providers --------------------------------------------------------------


class AuthMissingError(ReviewFlowError):
    code = "auth_missing"


class TransportError(ReviewFlowError):
    code = "transport_error"


class SchemaViolationError(ReviewFlowError):
    code = "schema_violation"

    def __init__(self, message: str, raw: str | None = None, attempts: int = 0):
        super().__init__(message)
        self.raw = raw
        self.attempts = attempts


class UnsupportedFeatureError(ReviewFlowError):
    code = "unsupported_feature"


# --- agents -----------------------------------------------------------------


class UnresolvedPlaceholderError(ReviewFlowError):
    code = "unresolved_placeholder"


class ContextLookupError(ReviewFlowError):
    code = "context_lookup_failed"


class ImageValidationError(ReviewFlowError):
    code = "invalid_image"


# --- filters ----------------------------------------------------------------


class FilterSyntaxError(ReviewFlowError):
    """Raised with a 1-based character position into the filter source."""

    code = "filter_syntax"

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownColumnError(ReviewFlowError):
    code = "unknown_column"


class FilterTypeError(ReviewFlowError):
    code = "type_error"


# --- consensus / evaluation -------------------------------------------------


class ScoreRangeError(ReviewFlowError):
    code = "out_of_range"


class MissingSeniorError(ReviewFlowError):
    code = "missing_senior"


class NonNumericCellError(ReviewFlowError):
    code = "non_numeric"


class DegenerateLabelsError(ReviewFlowError):
    code = "degenerate_labels"


# --- config / io ------------------------------------------------------------


class ConfigError(ReviewFlowError):
    code = "config_error"


class DatasetError(ReviewFlowError):
    code = "dataset_error"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line

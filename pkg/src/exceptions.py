"""Exception hierarchy shared by all driftwatch components."""
from typing import Optional


class DriftwatchError(Exception):
    """Base class for every error raised by driftwatch."""


class InvalidInputError(DriftwatchError, ValueError):
    """An argument is outside its documented domain."""


class DimensionMismatchError(DriftwatchError, ValueError):
    """A vector or matrix does not have the expected shape."""

    def __init__(self, expected, actual, layer_index: Optional[int] = None, what: str = "input"):
        self.expected = expected
        self.actual = actual
        self.layer_index = layer_index
        location = f" at layer {layer_index}" if layer_index is not None else ""
        super().__init__(f"Dimension mismatch for {what}{location}: expected {expected}, got {actual}")


class StaleTapeError(DriftwatchError):
    """A tape was replayed against the wrong network or more than once."""


class NonFiniteError(DriftwatchError, ArithmeticError):
    """A NaN or infinite value appeared where finite values are required."""

    def __init__(self, where: str, layer_index: Optional[int] = None):
        self.where = where
        self.layer_index = layer_index
        location = f" (layer {layer_index})" if layer_index is not None else ""
        super().__init__(f"Non-finite value in {where}{location}")


class TrainingError(DriftwatchError):
    """Training could not run or was aborted."""


class WarmupError(DriftwatchError):
    """A window statistic was requested before the window holds any entry."""


class DataFormatError(DriftwatchError):
    """Input data could not be parsed."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")


class ModelFormatError(DriftwatchError):
    """A persisted model or checkpoint does not match the expected layout."""


class ConfigError(DriftwatchError):
    """Configuration failed validation."""

"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
TrainingDivergedError -> 3.
"""


class MillwatchError(Exception):
    """Base class for all millwatch errors."""


class ConfigError(MillwatchError):
    """Invalid configuration or definition file (usage-level problem)."""


class FsmDefinitionError(ConfigError):
    """FSM definition file violates a structural invariant."""


class DataError(MillwatchError):
    """Missing or malformed input data."""


class CsvFormatError(DataError):
    """Malformed signal CSV; message carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class MissingClassError(DataError):
    """A training split does not contain every required class."""


class TrainingDivergedError(MillwatchError):
    """Loss became non-finite during training."""


class ShapeMismatchError(MillwatchError, ValueError):
    """Tensor shape violates a layer or pipeline contract."""


class NonFiniteError(MillwatchError, ValueError):
    """NaN or Inf encountered at a layer boundary."""

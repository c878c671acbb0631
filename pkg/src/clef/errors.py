"""Exception types shared across the package."""


class ClefError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(ClefError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteValue(ClefError):
    """A forward computation produced NaN or Inf."""


class NonInvertibleValue(ClefError):
    """A denominator entry is too close to zero to divide by."""


class UnknownCondition(ClefError):
    """Condition token not present in a strict (file-loaded) registry."""


class InvalidHorizon(ClefError):
    """Requested forecast time is not strictly after the history."""


class InvalidIntervention(ClefError):
    """Concept edit set is empty, a no-op, or out of range."""


class SimulationDiverged(ClefError):
    """Simulator state became non-finite."""


class TrainingDiverged(ClefError):
    """Training loss became NaN/Inf."""


class DatasetFormatError(ClefError):
    """A dataset/checkpoint file failed schema validation."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class LeakageError(ClefError):
    """A held-out trajectory id was found in the training split."""

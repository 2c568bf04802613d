"""Exception types shared across the package."""


class ArmPoseError(Exception):
    """Base class for all armpose errors."""


class RotationError(ArmPoseError, ValueError):
    """Invalid rotation input: zero-norm quaternion, non-orthonormal matrix,
    or zero direction vector."""


class DegenerateSixDError(RotationError):
    """6D rotation block cannot be orthogonalized (columns vanish or are
    parallel)."""


class AnthropometryError(ArmPoseError, ValueError):
    """Non-positive bone length."""


class CalibrationError(ArmPoseError):
    """Calibration window empty or calibration state invalid."""


class UndefinedCorrelationError(ArmPoseError):
    """Rank correlation undefined because one input is entirely tied."""


class MergeOrderError(ArmPoseError):
    """Stream handed to the merger was not sorted by timestamp."""


class CsvFormatError(ArmPoseError):
    """Malformed CSV input. Carries the 1-based line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ShapeError(ArmPoseError, ValueError):
    """Array dimensions do not match the model or codec contract."""


class TrainingDivergedError(ArmPoseError):
    """Training loss became non-finite. Carries the loss history so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class NoStochasticityError(ArmPoseError):
    """Monte-Carlo prediction requested on a model with dropout rate 0."""


class MalformedPacketError(ArmPoseError):
    """Datagram failed the wire-format contract (size or magic)."""


class TransportError(ArmPoseError):
    """Network target unreachable or socket failure."""


class SplitError(ArmPoseError):
    """Cross-validation split impossible (fewer samples than folds)."""


class AggregationError(ArmPoseError):
    """Metric aggregation over an empty record list."""

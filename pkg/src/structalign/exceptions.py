"""Custom exception hierarchy for StructAlign operations."""


class StructAlignError(Exception):
    """Base exception for StructAlign operations."""
    pass


class NumericError(StructAlignError):
    """Errors raised by the differentiable arithmetic substrate."""
    pass


class ZeroVectorError(NumericError):
    """A vector with (near) zero norm was normalized or compared."""

    def __init__(self, message: str = "vector norm is below 1e-12", norm: float | None = None):
        """
        Initialize zero-vector error.

        Args:
            message: Error message
            norm: The offending norm if available
        """
        super().__init__(message)
        self.norm = norm


class NonPositiveTemperatureError(NumericError):
    """A softmax temperature was zero or negative."""
    pass


class NotADistributionError(NumericError):
    """A probability vector does not sum to one."""
    pass


class NotScalarError(NumericError):
    """backward() was called on a non-scalar node."""
    pass


class DisconnectedParameterError(NumericError):
    """A watched parameter does not influence the loss (strict mode only)."""
    pass


class NonFiniteFunctionValueError(NumericError):
    """A function evaluated during gradient checking returned NaN or Inf."""
    pass


class ShapeError(StructAlignError, ValueError):
    """Shape/size validation errors."""
    pass


class ShapeMismatchError(ShapeError):
    """Operand shapes are incompatible."""
    pass


class EmptySequenceError(ShapeError):
    """A token/frame sequence or a batch is empty."""
    pass


class BatchSizeMismatchError(ShapeError):
    """Text and video batches differ in size."""
    pass


class CategoryCountMismatchError(ShapeError):
    """Text and video category means differ in count."""
    pass


class GeometryError(StructAlignError):
    """Errors from prototype construction and geometry diagnostics."""
    pass


class DimensionTooSmallError(GeometryError):
    """Embedding dimension is smaller than the category count."""
    pass


class DegenerateCategoryCountError(GeometryError):
    """Fewer than two categories requested."""
    pass


class InsufficientSamplesError(GeometryError):
    """A category has fewer than two features."""
    pass


class UnknownCategoryError(GeometryError):
    """A category label has no prototype."""
    pass


class EncoderError(StructAlignError):
    """Encoder construction or integrity errors."""
    pass


class KTooLargeError(EncoderError):
    """More active experts requested than experts available."""
    pass


class FrozenParameterError(EncoderError):
    """A frozen base parameter changed during training."""
    pass


class CheckpointFormatError(EncoderError):
    """A model checkpoint file is truncated or not in the SALN container format."""
    pass


class ContinualProtocolError(StructAlignError):
    """Violations of the continual-learning protocol."""
    pass


class MissingSnapshotError(ContinualProtocolError):
    """An incremental task was trained without the previous model snapshot."""
    pass


class DataLeakError(ContinualProtocolError):
    """A pair from outside the current task was accessed during training."""

    def __init__(self, message: str, categories: list[int] | None = None):
        """
        Initialize data-leak error.

        Args:
            message: Error message
            categories: Offending category labels if available
        """
        super().__init__(message)
        self.categories = categories or []


class MetricsError(StructAlignError):
    """Errors from retrieval and forgetting metrics."""
    pass


class TruthNotInGalleryError(MetricsError):
    """A ground-truth index points outside the gallery."""
    pass


class EmptyRankListError(MetricsError):
    """A statistic was requested over zero ranks."""
    pass


class InsufficientTasksError(MetricsError):
    """Backward forgetting needs at least two tasks."""
    pass


class ConfigError(StructAlignError):
    """Invalid or unreadable experiment configuration."""
    pass


class OutputExistsError(StructAlignError):
    """An output directory exists and overwriting was not requested."""
    pass


class ExperimentError(StructAlignError):
    """Unexpected failure while running an experiment."""
    pass

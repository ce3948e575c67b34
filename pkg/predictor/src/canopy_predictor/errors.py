"""Errors raised by the prediction component."""


class PredictorError(Exception):
    """Base class."""


class ShapeError(PredictorError):
    """Tensor shape violates the model's input contract."""


class DataError(PredictorError):
    """A manifest tile could not be read; callers may skip and continue."""


class CheckpointMismatch(PredictorError):
    """Checkpoint architecture does not match the requested model."""

"""Custom exception classes for configuration, data and training failures."""

from typing import Iterable, Optional


class QnnFatError(ValueError):
    """Base class for all qnn_fat errors."""

    category = "error"
    exit_code = 1


class ConfigurationError(QnnFatError):
    """Raised when shapes, bit widths, probabilities or config keys are invalid."""

    category = "configuration"
    exit_code = 2

    def __init__(self, message: str, keys: Optional[Iterable[str]] = None):
        self.keys = sorted(keys) if keys else []
        if self.keys:
            message += f": {', '.join(self.keys)}"
        super().__init__(message)


class DatasetFormatError(QnnFatError):
    """Raised when a dataset file does not match its declared binary format."""

    category = "format"
    exit_code = 3

    def __init__(
        self,
        path: str,
        reason: str,
        offset: Optional[int] = None,
        expected: Optional[int] = None,
        actual: Optional[int] = None,
    ):
        self.path = path
        self.offset = offset
        self.expected = expected
        self.actual = actual
        message = f"{path}: {reason}"
        if expected is not None and actual is not None:
            message += f" (expected {expected} bytes, got {actual})"
        if offset is not None:
            message += f" at byte offset {offset}"
        super().__init__(message)


class CheckpointError(QnnFatError):
    """Raised when a checkpoint container is malformed or has an unknown version."""

    category = "format"
    exit_code = 3

    def __init__(self, path: str, reason: str):
        self.path = path
        super().__init__(f"Invalid checkpoint '{path}': {reason}")


class DivergenceError(QnnFatError):
    """Raised when the training loss stops being finite."""

    category = "divergence"
    exit_code = 5

    def __init__(self, epoch: int, step: int, loss: float):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(
            f"Training diverged at epoch {epoch}, step {step}: loss = {loss}"
        )

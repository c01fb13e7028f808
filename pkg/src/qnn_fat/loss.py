"""Squared hinge loss over one-vs-rest targets."""

from typing import Tuple

import numpy as np

from .errors import ConfigurationError
from .tensor import Tensor4


def one_vs_rest(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Targets in {-1, +1}: +1 at the true class, -1 elsewhere."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ConfigurationError(
            f"Labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    targets = -np.ones((labels.shape[0], num_classes), dtype=np.float32)
    targets[np.arange(labels.shape[0]), labels] = 1.0
    return targets


def squared_hinge_loss(logits: Tensor4, labels: np.ndarray) -> Tuple[float, Tensor4]:
    """Mean over the batch of ``sum_k max(0, 1 - y_k * logit_k) ** 2``.

    Args:
        logits: ``(b, classes)`` or ``(b, classes, 1, 1)`` scores.
        labels: Integer class labels of length ``b``.

    Returns:
        Tuple of the scalar loss and its gradient shaped like ``logits``.
    """
    scores = np.asarray(logits, dtype=np.float64).reshape(logits.shape[0], -1)
    y = one_vs_rest(labels, scores.shape[1])
    margin = np.maximum(0.0, 1.0 - y * scores)
    batch = scores.shape[0]
    loss = float((margin**2).sum() / batch)
    grad = (-2.0 * y * margin / batch).reshape(logits.shape)
    return loss, grad.astype(np.float32)

"""Training-time error injection and the Dropout / Dropout2D baselines.

The injection layer overwrites activations with codebook values. With
injection percentage ``p`` and ``E`` codebook values, the interval
``[0, p/100)`` is split into ``E`` equal parts; an element whose uniform draw
``r`` lands in part ``k`` is replaced by the ``k``-th value. Every value is
therefore injected with probability ``(p/100)/E``. Survivors are never scaled
and the gradient of an overwritten element is zero.

The random tensor ``r`` is drawn at a reduced shape and broadcast:

* ``element`` - one draw per element, shape ``(b, c, h, w)``
* ``channel`` - one draw per ``(b, c)``, shape ``(b, c, 1, 1)``
* ``pixel``   - one draw per ``(b, h, w)``, shape ``(b, 1, h, w)``

so a stuck channel (or pixel fiber) always holds a single value.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigurationError
from .quantization import QuantCodebook
from .tensor import Shape4, Tensor4, as_tensor4


class FaultModel(Enum):
    """Granularity of one random draw."""

    ELEMENT = "element"
    CHANNEL = "channel"
    PIXEL = "pixel"

    def __str__(self) -> str:
        return self.value

    def draw_shape(self, shape: Shape4) -> Shape4:
        b, c, h, w = shape
        if self is FaultModel.CHANNEL:
            return (b, c, 1, 1)
        if self is FaultModel.PIXEL:
            return (b, 1, h, w)
        return (b, c, h, w)


def parse_fault_model(value) -> FaultModel:
    if isinstance(value, FaultModel):
        return value
    try:
        return FaultModel(str(value).lower())
    except ValueError:
        raise ConfigurationError(
            f"Unknown fault model '{value}'; expected one of "
            f"{[m.value for m in FaultModel]}"
        ) from None


@dataclass
class InjectionConfig:
    """Settings of one injection layer.

    ``p`` is a percentage in ``[0, 100]``. A disabled layer is the identity in
    both passes and consumes no random numbers.
    """

    p: float
    model: FaultModel
    codebook: QuantCodebook
    enabled: bool = True
    rng_seed: Optional[int] = None

    def __post_init__(self):
        self.model = parse_fault_model(self.model)
        validate_percentage(self.p)

    @property
    def probability(self) -> float:
        return self.p / 100.0


@dataclass
class InjectionMask:
    """Which elements were overwritten and with which codebook index.

    ``value_index`` is -1 where nothing was injected.
    """

    injected: np.ndarray
    value_index: np.ndarray

    @classmethod
    def empty(cls, shape: Shape4) -> "InjectionMask":
        return cls(
            injected=np.zeros(shape, dtype=bool),
            value_index=np.full(shape, -1, dtype=np.int8),
        )

    @property
    def shape(self) -> Shape4:
        return self.injected.shape

    def count(self) -> int:
        return int(self.injected.sum())


def validate_percentage(p: float) -> None:
    if not 0.0 <= float(p) <= 100.0:
        raise ConfigurationError(f"Injection percentage p must be in [0, 100], got {p}")


def injection_thresholds(p: float, num_values: int) -> np.ndarray:
    """Upper bounds ``p_k = (p/100) * (k+1) / E`` for ``k = 0 .. E-1``."""
    validate_percentage(p)
    if num_values < 1:
        raise ConfigurationError("Injection needs a codebook with at least one value")
    k = np.arange(1, num_values + 1, dtype=np.float64)
    return (p / 100.0) * k / num_values


def draw_r(shape: Shape4, model: FaultModel, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws broadcast over the dimensions the fault model shares.

    The returned array is a read-only broadcast view of shape ``shape``.
    """
    model = parse_fault_model(model)
    if len(shape) != 4 or any(int(d) < 0 for d in shape):
        raise ConfigurationError(f"draw_r needs a non-negative rank-4 shape, got {shape}")
    r = rng.random(model.draw_shape(tuple(shape)))
    return np.broadcast_to(r, tuple(shape))


def _select_values(
    r: np.ndarray, thresholds: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    # k with p_{k-1} <= r < p_k; k == E means no injection.
    k = np.searchsorted(thresholds, r, side="right")
    injected = k < thresholds.size
    return injected, np.where(injected, k, -1).astype(np.int8)


def inject_forward(
    alpha: Tensor4,
    cfg: InjectionConfig,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[Tensor4, InjectionMask]:
    """Overwrite activations with codebook values (training-time injection).

    Args:
        alpha: Post-quantizer activations; values should lie in ``cfg.codebook``.
        cfg: Probability, fault model, codebook and enable status.
        rng: Generator to draw from. When None, one is created from
            ``cfg.rng_seed``.

    Returns:
        Tuple of the injected tensor and the mask needed by the backward pass.
    """
    alpha = as_tensor4(alpha, "alpha")
    if not cfg.enabled:
        return alpha, InjectionMask.empty(alpha.shape)
    if cfg.codebook.size == 0:
        raise ConfigurationError(
            "Cannot inject into float activations; use an activation bit width of 1-4"
        )
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)

    thresholds = injection_thresholds(cfg.p, cfg.codebook.size)
    r = rng.random(cfg.model.draw_shape(alpha.shape))
    injected, value_index = _select_values(r, thresholds)
    injected = np.broadcast_to(injected, alpha.shape)
    value_index = np.broadcast_to(value_index, alpha.shape)

    values = cfg.codebook.as_array()[np.maximum(value_index, 0)]
    alpha_hat = np.where(injected, values, alpha).astype(np.float32)
    mask = InjectionMask(injected=injected.copy(), value_index=value_index.copy())
    return alpha_hat, mask


def inject_backward(grad_out: Tensor4, mask: InjectionMask) -> Tensor4:
    """Zero the gradient of overwritten elements; pass the rest unchanged."""
    return np.where(mask.injected, np.float32(0.0), grad_out).astype(np.float32)


def injection_frequencies(mask: InjectionMask, codebook: QuantCodebook) -> Dict[float, float]:
    """Fraction of elements that received each codebook value."""
    total = mask.injected.size
    counts = np.bincount(
        mask.value_index[mask.injected].astype(np.int64), minlength=codebook.size
    )
    return {value: counts[k] / total for k, value in enumerate(codebook.values)}


# ---------------------------------------------------------------------------
# Dropout baselines
# ---------------------------------------------------------------------------


def _validate_dropout_probability(p: float) -> None:
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"Dropout probability must be in [0, 1), got {p}")


def dropout_forward(
    alpha: Tensor4, p: float, rng: np.random.Generator
) -> Tuple[Tensor4, np.ndarray]:
    """Zero each element with probability ``p`` and scale survivors by ``1/(1-p)``.

    Returns the output and the boolean ``dropped`` mask.
    """
    _validate_dropout_probability(p)
    alpha = as_tensor4(alpha, "alpha")
    dropped = rng.random(alpha.shape) < p
    scale = np.float32(1.0 / (1.0 - p))
    return np.where(dropped, np.float32(0.0), alpha * scale).astype(np.float32), dropped


def dropout_backward(grad_out: Tensor4, dropped: np.ndarray, p: float) -> Tensor4:
    _validate_dropout_probability(p)
    scale = np.float32(1.0 / (1.0 - p))
    return np.where(dropped, np.float32(0.0), grad_out * scale).astype(np.float32)


def dropout2d_forward(
    alpha: Tensor4, p: float, rng: np.random.Generator
) -> Tuple[Tensor4, np.ndarray]:
    """Drop whole ``(b, c)`` channel planes with probability ``p``."""
    _validate_dropout_probability(p)
    alpha = as_tensor4(alpha, "alpha")
    b, c, _, _ = alpha.shape
    dropped = np.broadcast_to(rng.random((b, c, 1, 1)) < p, alpha.shape).copy()
    scale = np.float32(1.0 / (1.0 - p))
    return np.where(dropped, np.float32(0.0), alpha * scale).astype(np.float32), dropped


dropout2d_backward = dropout_backward

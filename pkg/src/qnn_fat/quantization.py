"""Symmetric codebooks, quantize/dequantize mappings and the straight-through
estimator.

A codebook for ``b`` bits is the ordered set of values an activation (or a
weight) may take. For ``b = 1`` it is ``{-1, +1}``; for ``b >= 2`` it is the
uniform grid on ``[-1, 1]`` with ``2**b - 1`` points, zero included. The same
codebook is the set of error values the injection layer writes.

Bit width 32 means "no quantization": the float passthrough codebook has no
values and ``quantize`` returns its input.
"""

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from .errors import ConfigurationError

SUPPORTED_BITWIDTHS = (1, 2, 3, 4)
FLOAT_BITWIDTH = 32
STE_CLIP = 1.0


@dataclass(frozen=True)
class QuantCodebook:
    """Ordered set of representable values for one bit width."""

    bitwidth: int
    values: Tuple[float, ...] = field(default=())

    @property
    def size(self) -> int:
        """Number of values E (0 for the float passthrough)."""
        return len(self.values)

    @property
    def is_float(self) -> bool:
        return self.bitwidth == FLOAT_BITWIDTH

    @property
    def step(self) -> float:
        """Spacing between neighbouring values."""
        if self.size < 2:
            return 0.0
        return 2.0 / (self.size - 1)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float32)

    def index_of(self, value: float) -> int:
        """Position of ``value`` in the codebook; raises if it is not a member."""
        matches = np.flatnonzero(self.as_array() == np.float32(value))
        if matches.size == 0:
            raise ConfigurationError(
                f"Value {value} is not in the {self.bitwidth}-bit codebook {self.values}"
            )
        return int(matches[0])

    def __contains__(self, value: float) -> bool:
        return bool(np.any(self.as_array() == np.float32(value)))

    def to_dict(self) -> dict:
        return {"bitwidth": self.bitwidth, "values": [float(v) for v in self.values]}


def make_codebook(bitwidth: int) -> QuantCodebook:
    """Build the symmetric codebook for ``bitwidth`` bits.

    Args:
        bitwidth: 1, 2, 3 or 4; 32 returns the float passthrough codebook.

    Returns:
        QuantCodebook with ``E = 2`` values for 1 bit and ``2**b - 1`` otherwise.

    Raises:
        ConfigurationError: if ``bitwidth`` is not supported.
    """
    if bitwidth == FLOAT_BITWIDTH:
        return QuantCodebook(FLOAT_BITWIDTH, ())
    if bitwidth not in SUPPORTED_BITWIDTHS:
        raise ConfigurationError(
            f"Unsupported bit width {bitwidth}; expected one of "
            f"{SUPPORTED_BITWIDTHS + (FLOAT_BITWIDTH,)}"
        )
    if bitwidth == 1:
        return QuantCodebook(1, (-1.0, 1.0))

    count = 2**bitwidth - 1
    # Integer grid keeps the values exactly symmetric, e.g. -1/3 == -(1/3).
    half = (count - 1) // 2
    values = tuple(float(np.float32(k / half)) for k in range(-half, half + 1))
    return QuantCodebook(bitwidth, values)


def quantize_indices(x: np.ndarray, cb: QuantCodebook) -> np.ndarray:
    """Index of the nearest codebook value for every element.

    Ties round toward +inf, so for the 1-bit codebook 0 maps to +1.
    """
    if cb.is_float:
        raise ConfigurationError("The float passthrough codebook has no indices")
    clipped = np.clip(x, -1.0, 1.0)
    idx = np.floor((clipped + 1.0) / cb.step + 0.5).astype(np.int64)
    return np.clip(idx, 0, cb.size - 1)


def dequantize(indices: np.ndarray, cb: QuantCodebook) -> np.ndarray:
    """Map codebook indices back to their values."""
    return cb.as_array()[np.asarray(indices, dtype=np.int64)]


def quantize(x: np.ndarray, cb: QuantCodebook) -> np.ndarray:
    """Map every element of ``x`` to its nearest codebook value."""
    if cb.is_float:
        return np.asarray(x, dtype=np.float32)
    return dequantize(quantize_indices(x, cb), cb)


def quantize_backward(
    grad_out: np.ndarray, pre_activation: np.ndarray, clip: float = STE_CLIP
) -> np.ndarray:
    """Straight-through estimator: pass gradients where ``|pre| <= clip``."""
    mask = np.abs(pre_activation) <= clip
    return np.where(mask, grad_out, np.float32(0.0)).astype(np.float32)

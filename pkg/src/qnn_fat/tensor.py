"""Rank-4 tensors, trainable parameters and the functional layer kernels.

Activations are ``float32`` arrays shaped ``(batch, channels, height, width)``.
Fully-connected outputs keep that rank as ``(batch, features, 1, 1)`` so every
layer output is a feature map, and an FC neuron is simply a 1x1 channel.

Each kernel comes as a ``*_forward`` / ``*_backward`` pair. Forward functions
never mutate their inputs; the caller keeps whatever the backward needs.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError

Tensor4 = np.ndarray
Shape4 = Tuple[int, int, int, int]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def as_tensor4(x, name: str = "input") -> Tensor4:
    """Validate ``x`` as a rank-4 array and return it as float32."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 4:
        raise ConfigurationError(
            f"{name} must be rank 4 (batch, channels, height, width); got shape {arr.shape}"
        )
    return arr


@dataclass
class Parameter:
    """A trainable tensor with its gradient buffer."""

    name: str
    data: np.ndarray
    grad: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise ConfigurationError(
                f"Gradient shape {grad.shape} does not match parameter "
                f"'{self.name}' shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = grad.astype(np.float32)
        else:
            self.grad += grad


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def conv2d_output_shape(in_shape: Shape4, out_channels: int, kernel: int, padding: int):
    b, c, h, w = in_shape
    h_out = h + 2 * padding - kernel + 1
    w_out = w + 2 * padding - kernel + 1
    if h_out < 1 or w_out < 1:
        raise ConfigurationError(
            f"Kernel {kernel}x{kernel} with padding {padding} does not fit a "
            f"{h}x{w} input"
        )
    return (b, out_channels, h_out, w_out)


def _pad(x: Tensor4, padding: int) -> Tensor4:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x: Tensor4, weights: np.ndarray, padding: int = 0) -> Tensor4:
    """Stride-1 cross-correlation of ``x`` with ``weights`` (out, in, kh, kw)."""
    x = as_tensor4(x)
    out_c, in_c, kh, kw = weights.shape
    if kh != kw:
        raise ConfigurationError(f"Only square kernels are supported, got {kh}x{kw}")
    if x.shape[1] != in_c:
        raise ConfigurationError(
            f"conv2d expects {in_c} input channels, got {x.shape[1]}"
        )
    conv2d_output_shape(x.shape, out_c, kh, padding)
    windows = sliding_window_view(_pad(x, padding), (kh, kw), axis=(2, 3))
    # windows: (b, c, h_out, w_out, kh, kw)
    out = np.tensordot(windows, weights, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2), dtype=np.float32)


def conv2d_backward(
    grad_out: Tensor4, x: Tensor4, weights: np.ndarray, padding: int = 0
) -> Tuple[Tensor4, np.ndarray]:
    """Gradients of the cross-correlation w.r.t. its input and its weights."""
    _, _, kh, kw = weights.shape
    xp = _pad(x, padding)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    grad_w = np.tensordot(grad_out, windows, axes=([0, 2, 3], [0, 2, 3]))

    h_out, w_out = grad_out.shape[2], grad_out.shape[3]
    grad_xp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            grad_xp[:, :, u : u + h_out, v : v + w_out] += np.einsum(
                "bohw,oc->bchw", grad_out, weights[:, :, u, v], optimize=True
            )
    if padding:
        grad_xp = grad_xp[:, :, padding:-padding, padding:-padding]
    return grad_xp.astype(np.float32), grad_w.astype(np.float32)


# ---------------------------------------------------------------------------
# Fully connected
# ---------------------------------------------------------------------------


def fully_connected_forward(x: Tensor4, weights: np.ndarray) -> Tensor4:
    """Flatten ``x`` per sample and multiply by ``weights`` (out, in)."""
    x = as_tensor4(x)
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] != weights.shape[1]:
        raise ConfigurationError(
            f"fully_connected expects {weights.shape[1]} input features, "
            f"got {flat.shape[1]}"
        )
    out = flat @ weights.T
    return out.reshape(x.shape[0], weights.shape[0], 1, 1).astype(np.float32)


def fully_connected_backward(
    grad_out: Tensor4, x: Tensor4, weights: np.ndarray
) -> Tuple[Tensor4, np.ndarray]:
    g = grad_out.reshape(grad_out.shape[0], -1)
    flat = x.reshape(x.shape[0], -1)
    grad_w = g.T @ flat
    grad_x = (g @ weights).reshape(x.shape)
    return grad_x.astype(np.float32), grad_w.astype(np.float32)


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def batch_norm_forward(
    x: Tensor4,
    gamma: np.ndarray,
    beta: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tuple[Tensor4, Optional[BatchNormCache]]:
    """Per-channel normalize, scale and shift.

    In train mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place; eval mode only reads them.
    """
    x = as_tensor4(x)
    if x.shape[1] != gamma.shape[0]:
        raise ConfigurationError(
            f"batch_norm has {gamma.shape[0]} channels, input has {x.shape[1]}"
        )
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        count = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var

    inv_std = (1.0 / np.sqrt(var + eps)).astype(np.float32)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * x_hat + beta[None, :, None, None]
    cache = BatchNormCache(x_hat, inv_std, gamma) if train else None
    return out.astype(np.float32), cache


def batch_norm_backward(
    grad_out: Tensor4, cache: BatchNormCache
) -> Tuple[Tensor4, np.ndarray, np.ndarray]:
    """Gradients w.r.t. input, scale and shift for a train-mode forward."""
    axes = (0, 2, 3)
    count = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    grad_gamma = (grad_out * cache.x_hat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    g_hat = grad_out * cache.gamma[None, :, None, None]
    grad_x = (
        cache.inv_std[None, :, None, None]
        / count
        * (
            count * g_hat
            - g_hat.sum(axis=axes)[None, :, None, None]
            - cache.x_hat * (g_hat * cache.x_hat).sum(axis=axes)[None, :, None, None]
        )
    )
    return (
        grad_x.astype(np.float32),
        grad_gamma.astype(np.float32),
        grad_beta.astype(np.float32),
    )


# ---------------------------------------------------------------------------
# Max pooling (2x2, stride 2)
# ---------------------------------------------------------------------------

POOL = 2


def max_pool2d_output_shape(in_shape: Shape4) -> Shape4:
    b, c, h, w = in_shape
    if h < POOL or w < POOL:
        raise ConfigurationError(f"max_pool2d needs at least a 2x2 input, got {h}x{w}")
    return (b, c, h // POOL, w // POOL)


def _pool_windows(x: Tensor4) -> np.ndarray:
    b, c, h, w = x.shape
    ho, wo = h // POOL, w // POOL
    # Odd trailing rows/columns are dropped.
    cropped = x[:, :, : ho * POOL, : wo * POOL]
    return (
        cropped.reshape(b, c, ho, POOL, wo, POOL)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, ho, wo, POOL * POOL)
    )


def max_pool2d_forward(x: Tensor4) -> Tuple[Tensor4, np.ndarray]:
    """Window maximum and the row-major argmax inside each window."""
    x = as_tensor4(x)
    max_pool2d_output_shape(x.shape)
    windows = _pool_windows(x)
    # np.argmax returns the first occurrence, i.e. the row-major first maximum.
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out, dtype=np.float32), argmax


def max_pool2d_backward(
    grad_out: Tensor4, argmax: np.ndarray, in_shape: Shape4
) -> Tensor4:
    b, c, h, w = in_shape
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    routed = np.zeros((b, c, ho, wo, POOL * POOL), dtype=np.float32)
    np.put_along_axis(routed, argmax[..., None], grad_out[..., None], axis=-1)
    routed = (
        routed.reshape(b, c, ho, wo, POOL, POOL)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, ho * POOL, wo * POOL)
    )
    grad_x = np.zeros(in_shape, dtype=np.float32)
    grad_x[:, :, : ho * POOL, : wo * POOL] = routed
    return grad_x

"""Layer objects: a ``LayerSpec`` describes a layer, a ``Layer`` runs it.

Layers keep the tensors their backward pass needs only when called in train
mode. An eval-mode forward reads parameters and running statistics and writes
nothing, so a frozen network can be shared by many workers.
"""

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigurationError
from .injection import (
    FaultModel,
    InjectionConfig,
    InjectionMask,
    dropout2d_backward,
    dropout2d_forward,
    dropout_backward,
    dropout_forward,
    inject_backward,
    inject_forward,
    parse_fault_model,
)
from .quantization import (
    FLOAT_BITWIDTH,
    SUPPORTED_BITWIDTHS,
    make_codebook,
    quantize,
    quantize_backward,
)
from .tensor import (
    Parameter,
    Shape4,
    Tensor4,
    batch_norm_backward,
    batch_norm_forward,
    conv2d_backward,
    conv2d_forward,
    conv2d_output_shape,
    fully_connected_backward,
    fully_connected_forward,
    max_pool2d_backward,
    max_pool2d_forward,
    max_pool2d_output_shape,
)

VALID_BITWIDTHS = SUPPORTED_BITWIDTHS + (FLOAT_BITWIDTH,)


class LayerKind(Enum):
    CONV2D = "conv2d"
    FULLY_CONNECTED = "fully_connected"
    BATCH_NORM = "batch_norm"
    MAX_POOL = "max_pool"
    QUANT_ACT = "quant_act"
    INJECTION = "injection"
    DROPOUT = "dropout"
    DROPOUT2D = "dropout2d"

    def __str__(self) -> str:
        return self.value


# Layers that act only during training and mark a fault application point.
SLOT_KINDS = (LayerKind.INJECTION, LayerKind.DROPOUT, LayerKind.DROPOUT2D)
# Layers whose output channels are the processing elements a fault can hit.
COMPUTE_KINDS = (LayerKind.CONV2D, LayerKind.FULLY_CONNECTED)


@dataclass
class LayerSpec:
    """Kind plus the kind-specific parameters of one layer.

    ``p`` is a percentage for injection layers and a fraction in ``[0, 1)``
    for the dropout layers.
    """

    kind: LayerKind
    in_channels: Optional[int] = None
    out_channels: Optional[int] = None
    kernel_size: Optional[int] = None
    padding: int = 0
    in_features: Optional[int] = None
    out_features: Optional[int] = None
    weight_bits: Optional[int] = None
    act_bits: Optional[int] = None
    channels: Optional[int] = None
    p: Optional[float] = None
    fault_model: Optional[str] = None
    enabled: bool = False

    def __post_init__(self):
        if not isinstance(self.kind, LayerKind):
            try:
                self.kind = LayerKind(self.kind)
            except ValueError:
                raise ConfigurationError(f"Unknown layer kind '{self.kind}'") from None
        self.validate()

    def validate(self) -> None:
        kind = self.kind
        if kind is LayerKind.CONV2D:
            self._require_positive("in_channels", "out_channels", "kernel_size")
            self._require_bits("weight_bits")
            if self.padding < 0:
                raise ConfigurationError(f"Padding must be >= 0, got {self.padding}")
        elif kind is LayerKind.FULLY_CONNECTED:
            self._require_positive("in_features", "out_features")
            self._require_bits("weight_bits")
        elif kind is LayerKind.BATCH_NORM:
            self._require_positive("channels")
        elif kind is LayerKind.QUANT_ACT:
            self._require_bits("act_bits")
        elif kind is LayerKind.INJECTION:
            self._require_bits("act_bits")
            if self.p is None or not 0.0 <= self.p <= 100.0:
                raise ConfigurationError(f"Injection p must be in [0, 100], got {self.p}")
            self.fault_model = parse_fault_model(self.fault_model or "channel").value
        elif kind in (LayerKind.DROPOUT, LayerKind.DROPOUT2D):
            if self.p is None or not 0.0 <= self.p < 1.0:
                raise ConfigurationError(f"Dropout p must be in [0, 1), got {self.p}")

    def _require_positive(self, *names: str) -> None:
        bad = [n for n in names if getattr(self, n) is None or getattr(self, n) < 1]
        if bad:
            raise ConfigurationError(f"{self.kind} layer needs positive values for", bad)

    def _require_bits(self, name: str) -> None:
        value = getattr(self, name)
        if value not in VALID_BITWIDTHS:
            raise ConfigurationError(
                f"{self.kind} {name} must be one of {VALID_BITWIDTHS}, got {value}"
            )

    def to_dict(self) -> Dict:
        data = {k: v for k, v in asdict(self).items() if v is not None}
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "LayerSpec":
        return cls(**data)


@dataclass
class ForwardContext:
    """Per-call settings threaded through a forward pass."""

    train: bool = False
    rng: Optional[np.random.Generator] = None


class Layer:
    """Base layer; subclasses implement ``forward``, ``backward`` and shapes."""

    def __init__(self, spec: LayerSpec, rng: Optional[np.random.Generator] = None):
        self.spec = spec
        self._cache = None

    @property
    def kind(self) -> LayerKind:
        return self.spec.kind

    def output_shape(self, in_shape: Shape4) -> Shape4:
        return in_shape

    def forward(self, x: Tensor4, ctx: ForwardContext) -> Tensor4:
        raise NotImplementedError

    def backward(self, grad_out: Tensor4) -> Tensor4:
        raise NotImplementedError

    def parameters(self) -> List[Parameter]:
        return []

    def buffers(self) -> Dict[str, np.ndarray]:
        """Non-trainable state saved with checkpoints."""
        return {}

    def _require_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind} backward called without a train-mode forward")
        return self._cache

    def __getstate__(self):
        # Copies and pickles (worker processes) never carry training caches.
        state = self.__dict__.copy()
        state["_cache"] = None
        return state

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec.to_dict()})"


class _WeightedLayer(Layer):
    """Shared weight handling for conv and FC layers."""

    def __init__(self, spec: LayerSpec, shape, fan_in: int, fan_out: int, rng):
        super().__init__(spec)
        self.codebook = make_codebook(spec.weight_bits)
        if self.codebook.is_float:
            limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
        else:
            limit = 1.0
        self.weight = Parameter(
            f"{spec.kind.value}.weight", rng.uniform(-limit, limit, size=shape)
        )

    def quantized_weight(self) -> np.ndarray:
        return quantize(self.weight.data, self.codebook)

    def weight_grad(self, grad_wq: np.ndarray) -> np.ndarray:
        if self.codebook.is_float:
            return grad_wq
        return quantize_backward(grad_wq, self.weight.data)

    def clip_weights(self) -> None:
        if not self.codebook.is_float:
            np.clip(self.weight.data, -1.0, 1.0, out=self.weight.data)

    def parameters(self) -> List[Parameter]:
        return [self.weight]


class Conv2d(_WeightedLayer):
    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        k = spec.kernel_size
        shape = (spec.out_channels, spec.in_channels, k, k)
        super().__init__(
            spec, shape, spec.in_channels * k * k, spec.out_channels * k * k, rng
        )

    def output_shape(self, in_shape: Shape4) -> Shape4:
        if in_shape[1] != self.spec.in_channels:
            raise ConfigurationError(
                f"conv2d expects {self.spec.in_channels} channels, got {in_shape[1]}"
            )
        return conv2d_output_shape(
            in_shape, self.spec.out_channels, self.spec.kernel_size, self.spec.padding
        )

    def forward(self, x: Tensor4, ctx: ForwardContext) -> Tensor4:
        wq = self.quantized_weight()
        out = conv2d_forward(x, wq, self.spec.padding)
        if ctx.train:
            self._cache = (x, wq)
        return out

    def backward(self, grad_out: Tensor4) -> Tensor4:
        x, wq = self._require_cache()
        grad_x, grad_wq = conv2d_backward(grad_out, x, wq, self.spec.padding)
        self.weight.accumulate(self.weight_grad(grad_wq))
        return grad_x


class FullyConnected(_WeightedLayer):
    def __init__(self, spec: LayerSpec, rng: np.random.Generator):
        shape = (spec.out_features, spec.in_features)
        super().__init__(spec, shape, spec.in_features, spec.out_features, rng)

    def output_shape(self, in_shape: Shape4) -> Shape4:
        features = in_shape[1] * in_shape[2] * in_shape[3]
        if features != self.spec.in_features:
            raise ConfigurationError(
                f"fully_connected expects {self.spec.in_features} features, got {features}"
            )
        return (in_shape[0], self.spec.out_features, 1, 1)

    def forward(self, x: Tensor4, ctx: ForwardContext) -> Tensor4:
        wq = self.quantized_weight()
        out = fully_connected_forward(x, wq)
        if ctx.train:
            self._cache = (x, wq)
        return out

    def backward(self, grad_out: Tensor4) -> Tensor4:
        x, wq = self._require_cache()
        grad_x, grad_wq = fully_connected_backward(grad_out, x, wq)
        self.weight.accumulate(self.weight_grad(grad_wq))
        return grad_x


class BatchNorm(Layer):
    def __init__(self, spec: LayerSpec, rng: Optional[np.random.Generator] = None):
        super().__init__(spec)
        c = spec.channels
        self.gamma = Parameter("batch_norm.gamma", np.ones(c))
        self.beta = Parameter("batch_norm.beta", np.zeros(c))
        self.running_mean = np.zeros(c, dtype=np.float32)
        self.running_var = np.ones(c, dtype=np.float32)

    def output_shape(self, in_shape: Shape4) -> Shape4:
        if in_shape[1] != self.spec.channels:
            raise ConfigurationError(
                f"batch_norm expects {self.spec.channels} channels, got {in_shape[1]}"
            )
        return in_shape

    def forward(self, x: Tensor4, ctx: ForwardContext) -> Tensor4:
        out, cache = batch_norm_forward(
            x,
            self.gamma.data,
            self.beta.data,
            self.running_mean,
            self.running_var,
            train=ctx.train,
        )
        if ctx.train:
            self._cache = cache
        return out

    def backward(self, grad_out: Tensor4) -> Tensor4:
        grad_x, grad_gamma, grad_beta = batch_norm_backward(grad_out, self._require_cache())
        self.gamma.accumulate(grad_gamma)
        self.beta.accumulate(grad_beta)
        return grad_x

    def parameters(self) -> List[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> Dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class MaxPool2d(Layer):
    def output_shape(self, in_shape: Shape4) -> Shape4:
        return max_pool2d_output_shape(in_shape)

    def forward(self, x: Tensor4, ctx: ForwardContext) -> Tensor4:
        out, argmax = max_pool2d_forward(x)
        if ctx.train:
            self._cache = (argmax, x.shape)
        return out

    def backward(self, grad_out: Tensor4) -> Tensor4:
        argmax, in_shape = self._require_cache()
        return max_pool2d_backward(grad_out, argmax, in_shape)


class QuantAct(Layer):
    def __init__(self, spec: LayerSpec, rng: Optional[np.random.Generator] = None):
        super().__init__(spec)
        self.codebook = make_codebook(spec.act_bits)

    def forward(self, x: Tensor4, ctx: ForwardContext) -> Tensor4:
        if ctx.train:
            self._cache = x
        return quantize(x, self.codebook)

    def backward(self, grad_out: Tensor4) -> Tensor4:
        pre = self._require_cache()
        if self.codebook.is_float:
            return grad_out
        return quantize_backward(grad_out, pre)


class _SlotLayer(Layer):
    """Regularizer slot: active only in train mode and only when enabled."""

    @property
    def enabled(self) -> bool:
        return self.spec.enabled

    @enabled.setter
    def enabled(self, value: bool) -> None:
        self.spec.enabled = bool(value)

    def _rng(self, ctx: ForwardContext) -> np.random.Generator:
        if ctx.rng is None:
            raise ConfigurationError(f"An enabled {self.kind} layer needs an rng in train mode")
        return ctx.rng


class ErrorInjection(_SlotLayer):
    def __init__(self, spec: LayerSpec, rng: Optional[np.random.Generator] = None):
        super().__init__(spec)
        self.codebook = make_codebook(spec.act_bits)

    @property
    def config(self) -> InjectionConfig:
        return InjectionConfig(
            p=self.spec.p,
            model=FaultModel(self.spec.fault_model),
            codebook=self.codebook,
            enabled=self.spec.enabled,
        )

    def set_probability(self, p: float) -> None:
        self.spec.p = p
        self.spec.validate()

    def forward(self, x: Tensor4, ctx: ForwardContext) -> Tensor4:
        if not ctx.train:
            return x
        if not self.enabled:
            self._cache = None
            return x
        out, mask = inject_forward(x, self.config, self._rng(ctx))
        self._cache = mask
        return out

    def backward(self, grad_out: Tensor4) -> Tensor4:
        mask: Optional[InjectionMask] = self._cache
        if mask is None:
            return grad_out
        return inject_backward(grad_out, mask)


class Dropout(_SlotLayer):
    forward_fn = staticmethod(dropout_forward)
    backward_fn = staticmethod(dropout_backward)

    def forward(self, x: Tensor4, ctx: ForwardContext) -> Tensor4:
        if not ctx.train:
            return x
        if not self.enabled:
            self._cache = None
            return x
        out, dropped = self.forward_fn(x, self.spec.p, self._rng(ctx))
        self._cache = dropped
        return out

    def backward(self, grad_out: Tensor4) -> Tensor4:
        if self._cache is None:
            return grad_out
        return self.backward_fn(grad_out, self._cache, self.spec.p)


class Dropout2d(Dropout):
    forward_fn = staticmethod(dropout2d_forward)
    backward_fn = staticmethod(dropout2d_backward)


_LAYER_TYPES = {
    LayerKind.CONV2D: Conv2d,
    LayerKind.FULLY_CONNECTED: FullyConnected,
    LayerKind.BATCH_NORM: BatchNorm,
    LayerKind.MAX_POOL: MaxPool2d,
    LayerKind.QUANT_ACT: QuantAct,
    LayerKind.INJECTION: ErrorInjection,
    LayerKind.DROPOUT: Dropout,
    LayerKind.DROPOUT2D: Dropout2d,
}


def build_layer(spec: LayerSpec, rng: np.random.Generator) -> Layer:
    """Instantiate the layer class for ``spec``."""
    return _LAYER_TYPES[spec.kind](spec, rng)

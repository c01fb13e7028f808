"""Sequential networks and the CNV-style topologies.

A network is an ordered list of layers whose shapes compose. Every block that
the fault models target ends in a *slot* layer (error injection, dropout or
dropout2d) placed right after the block's activation or pooling layer. Slots
are transparent at inference; their positions are the *injection points*
where evaluation clamps activations to stuck values.
"""

import copy
import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError
from .injection import FaultModel
from .layers import (
    COMPUTE_KINDS,
    SLOT_KINDS,
    ErrorInjection,
    ForwardContext,
    Layer,
    LayerKind,
    LayerSpec,
    build_layer,
)
from .tensor import Parameter, Shape4, Tensor4, as_tensor4

TOPOLOGIES = ("cnv-s", "cnv", "toy")
SLOTS = ("injection", "dropout", "dropout2d", None)
EVAL_BATCH = 256


@dataclass
class InjectionPoint:
    """One fault application point of a network."""

    index: int
    layer_index: int
    producer_index: int
    shape: Tuple[int, int, int]

    @property
    def channels(self) -> int:
        return self.shape[0]

    @property
    def pixels(self) -> int:
        return self.shape[1] * self.shape[2]


@dataclass
class Network:
    """Ordered layers plus topology metadata.

    Args:
        specs: Layer specifications in execution order.
        input_shape: ``(channels, height, width)`` of one sample.
        num_classes: Width of the logits.
        rng: Generator used for weight initialization.
        metadata: Free-form description (topology id, bit widths, ...).
    """

    specs: List[LayerSpec]
    input_shape: Tuple[int, int, int]
    num_classes: int
    rng: Optional[np.random.Generator] = field(default=None, repr=False)
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        rng = self.rng if self.rng is not None else np.random.default_rng(0)
        self.rng = None
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.layers: List[Layer] = [build_layer(spec, rng) for spec in self.specs]
        self.output_shapes: List[Shape4] = []
        shape: Shape4 = (1,) + self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
            self.output_shapes.append(shape)
        if shape[1:] != (self.num_classes, 1, 1):
            raise ConfigurationError(
                f"Network output shape {shape[1:]} does not match "
                f"{self.num_classes} classes"
            )
        self.injection_points = self._find_injection_points()

    def _find_injection_points(self) -> List[InjectionPoint]:
        points = []
        producer = None
        for i, layer in enumerate(self.layers):
            if layer.kind in COMPUTE_KINDS:
                producer = i
            elif layer.kind in SLOT_KINDS:
                if producer is None:
                    raise ConfigurationError(
                        f"Slot layer {i} ({layer.kind}) has no conv/FC layer before it"
                    )
                points.append(
                    InjectionPoint(
                        index=len(points),
                        layer_index=i,
                        producer_index=producer,
                        shape=tuple(self.output_shapes[i][1:]),
                    )
                )
        return points

    # ------------------------------------------------------------------
    # Forward / backward
    # ------------------------------------------------------------------

    def forward(
        self,
        x: Tensor4,
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
        fault=None,
    ) -> Tensor4:
        """Run the whole stack.

        Args:
            x: Input batch.
            train: Train mode caches activations, updates batch-norm statistics
                and activates enabled slot layers.
            rng: Generator consumed by enabled slot layers in train mode.
            fault: Optional object with ``layer`` (injection point index) and
                ``apply(activation)``; applied after that injection point.
        """
        x = as_tensor4(x)
        ctx = ForwardContext(train=train, rng=rng)
        clamp_at = None
        if fault is not None:
            clamp_at = self.injection_points[fault.layer].layer_index
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, ctx)
            if i == clamp_at:
                x = fault.apply(x)
        return x

    def forward_range(self, x: Tensor4, start: int, stop: int) -> Tensor4:
        """Eval-mode forward through ``layers[start:stop]``."""
        ctx = ForwardContext(train=False)
        for layer in self.layers[start:stop]:
            x = layer.forward(x, ctx)
        return x

    def backward(self, grad: Tensor4) -> Tensor4:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def predict(self, x: np.ndarray, fault=None, batch_size: int = EVAL_BATCH) -> np.ndarray:
        """Top-1 class for every sample, evaluated in fixed-size batches."""
        labels = []
        for start in range(0, x.shape[0], batch_size):
            logits = self.forward(x[start : start + batch_size], fault=fault)
            labels.append(logits.reshape(logits.shape[0], -1).argmax(axis=1))
        if not labels:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(labels)

    # ------------------------------------------------------------------
    # Parameters and slots
    # ------------------------------------------------------------------

    def parameters(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def clip_weights(self) -> None:
        for layer in self.layers:
            if hasattr(layer, "clip_weights"):
                layer.clip_weights()

    @property
    def slot_layers(self) -> List[Layer]:
        return [self.layers[p.layer_index] for p in self.injection_points]

    def set_slot_status(self, statuses: Sequence[bool]) -> None:
        if len(statuses) != len(self.injection_points):
            raise ConfigurationError(
                f"Expected {len(self.injection_points)} slot statuses, got {len(statuses)}"
            )
        for layer, status in zip(self.slot_layers, statuses):
            layer.enabled = bool(status)

    def slot_status(self) -> List[bool]:
        return [layer.enabled for layer in self.slot_layers]

    def point_codebook(self, index: int):
        """Codebook of the activation quantizer feeding injection point ``index``."""
        point = self.injection_points[index]
        for layer in reversed(self.layers[: point.layer_index]):
            if layer.kind is LayerKind.QUANT_ACT:
                return layer.codebook
        raise ConfigurationError(f"Injection point {index} has no activation quantizer before it")

    def set_injection_probability(self, p: float) -> None:
        for layer in self.slot_layers:
            if isinstance(layer, ErrorInjection):
                layer.set_probability(p)

    def parameter_digest(self) -> str:
        """SHA-256 over every parameter and running statistic."""
        digest = hashlib.sha256()
        for layer in self.layers:
            for param in layer.parameters():
                digest.update(np.ascontiguousarray(param.data).tobytes())
            for name, buf in sorted(layer.buffers().items()):
                digest.update(name.encode())
                digest.update(np.ascontiguousarray(buf).tobytes())
        return digest.hexdigest()

    def clone(self) -> "Network":
        return copy.deepcopy(self)

    def without_slots(self) -> "Network":
        """Copy of this network with all slot layers physically removed."""
        twin = self.clone()
        keep = [i for i, layer in enumerate(twin.layers) if layer.kind not in SLOT_KINDS]
        twin.specs = [twin.specs[i] for i in keep]
        twin.layers = [twin.layers[i] for i in keep]
        twin.output_shapes = [twin.output_shapes[i] for i in keep]
        twin.injection_points = []
        return twin

    def describe(self) -> List[str]:
        return [f"{i:2d} {layer.kind.value:16s} -> {self.output_shapes[i][1:]}"
                for i, layer in enumerate(self.layers)]


# ---------------------------------------------------------------------------
# Topologies
# ---------------------------------------------------------------------------


def _slot_spec(slot: Optional[str], act_bits: int, p: float, fault_model) -> List[LayerSpec]:
    if slot is None:
        return []
    if slot == "injection":
        return [
            LayerSpec(
                LayerKind.INJECTION,
                act_bits=act_bits,
                p=p,
                fault_model=FaultModel(fault_model).value,
            )
        ]
    kind = LayerKind.DROPOUT2D if slot == "dropout2d" else LayerKind.DROPOUT
    return [LayerSpec(kind, p=p / 100.0)]


def _conv_block(
    in_c: int, out_c: int, w: int, a: int, pool: bool, slot_specs: List[LayerSpec]
) -> List[LayerSpec]:
    block = [
        LayerSpec(LayerKind.CONV2D, in_channels=in_c, out_channels=out_c,
                  kernel_size=3, weight_bits=w),
        LayerSpec(LayerKind.BATCH_NORM, channels=out_c),
        LayerSpec(LayerKind.QUANT_ACT, act_bits=a),
    ]
    if pool:
        block.append(LayerSpec(LayerKind.MAX_POOL))
    return block + slot_specs


def _fc_block(in_f: int, out_f: int, w: int, a: int, slot_specs: List[LayerSpec]):
    return [
        LayerSpec(LayerKind.FULLY_CONNECTED, in_features=in_f, out_features=out_f,
                  weight_bits=w),
        LayerSpec(LayerKind.BATCH_NORM, channels=out_f),
        LayerSpec(LayerKind.QUANT_ACT, act_bits=a),
    ] + slot_specs


def _flat_features(specs: List[LayerSpec], input_shape) -> int:
    rng = np.random.default_rng(0)
    shape = (1,) + tuple(input_shape)
    for spec in specs:
        shape = build_layer(spec, rng).output_shape(shape)
    return shape[1] * shape[2] * shape[3]


def topology_specs(
    topology: str,
    input_shape: Tuple[int, int, int],
    num_classes: int,
    weight_bits: int = 1,
    act_bits: int = 1,
    slot: Optional[str] = "injection",
    p: float = 0.0,
    fault_model="channel",
    fc_hidden: int = 128,
) -> List[LayerSpec]:
    """Layer specs of a named topology.

    ``cnv-s``: conv 16-32-64 (pool after the first two blocks), FC hidden, FC out.
    ``cnv``: conv 64-64-128-128-256-256 (pool after the 2nd and 4th), FC 512-512, FC out.
    ``toy``: one conv block with pooling and one FC output layer.

    ``p`` is a percentage; dropout slots receive ``p / 100``.
    """
    if slot not in SLOTS:
        raise ConfigurationError(f"Unknown slot kind '{slot}'; expected one of {SLOTS}")

    def slot_specs():
        return _slot_spec(slot, act_bits, p, fault_model)

    in_c = input_shape[0]
    if topology == "cnv-s":
        features = [
            *_conv_block(in_c, 16, weight_bits, act_bits, True, slot_specs()),
            *_conv_block(16, 32, weight_bits, act_bits, True, slot_specs()),
            *_conv_block(32, 64, weight_bits, act_bits, False, slot_specs()),
        ]
        hidden = [fc_hidden]
    elif topology == "cnv":
        widths = [64, 64, 128, 128, 256, 256]
        features, prev = [], in_c
        for i, width in enumerate(widths):
            features += _conv_block(prev, width, weight_bits, act_bits, i in (1, 3),
                                    slot_specs())
            prev = width
        hidden = [512, 512]
    elif topology == "toy":
        features = _conv_block(in_c, 4, weight_bits, act_bits, True, slot_specs())
        hidden = []
    else:
        raise ConfigurationError(f"Unknown topology '{topology}'; expected one of {TOPOLOGIES}")

    prev = _flat_features(features, input_shape)
    classifier = []
    for width in hidden:
        classifier += _fc_block(prev, width, weight_bits, act_bits, slot_specs())
        prev = width
    classifier += [
        LayerSpec(LayerKind.FULLY_CONNECTED, in_features=prev, out_features=num_classes,
                  weight_bits=weight_bits),
        LayerSpec(LayerKind.BATCH_NORM, channels=num_classes),
    ]
    return features + classifier


def build_network(
    topology: str,
    input_shape: Tuple[int, int, int],
    num_classes: int,
    weight_bits: int = 1,
    act_bits: int = 1,
    slot: Optional[str] = "injection",
    p: float = 0.0,
    fault_model="channel",
    rng: Optional[np.random.Generator] = None,
    fc_hidden: int = 128,
) -> Network:
    """Build a network for a named topology with the given slot layers."""
    specs = topology_specs(
        topology, input_shape, num_classes, weight_bits, act_bits, slot, p,
        fault_model, fc_hidden,
    )
    metadata = {
        "topology": topology,
        "weight_bits": weight_bits,
        "act_bits": act_bits,
        "slot": slot,
    }
    return Network(specs, tuple(input_shape), num_classes, rng=rng, metadata=metadata)

"""Exhaustive stuck-at fault sweeps over a frozen network.

A fault clamps activations at one injection point to a codebook value ``eps``
for every input: a whole channel (``channel`` mode) or one spatial position
across all channels (``pixel`` mode). Sweeps enumerate every value, every
injection point and every target, in that nesting order, and record the
top-1 accuracy of each configuration.

Sweeps never modify the network. Each configuration re-runs only the layers
after its injection point; the prefix activations are computed once per
batch and shared by every fault at that point.
"""

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from .datasets import LabeledSet
from .debug_logger import debug_session
from .errors import ConfigurationError
from .network import EVAL_BATCH, Network
from .tensor import Tensor4, as_tensor4

REPORT_SCHEMA_VERSION = 1
REPORT_COLUMNS = ("layer", "target_kind", "target_index", "epsilon", "accuracy")
SCATTER_COLUMNS = ("name", "min_acc", "max_acc", "error_free")


class TargetKind(Enum):
    CHANNEL = "channel"
    PIXEL = "pixel"

    def __str__(self) -> str:
        return self.value


def parse_target_kind(value) -> TargetKind:
    if isinstance(value, TargetKind):
        return value
    try:
        return TargetKind(str(value).lower())
    except ValueError:
        raise ConfigurationError(
            f"Unknown sweep mode '{value}'; expected 'channel' or 'pixel'"
        ) from None


def format_epsilon(eps: float) -> str:
    return f"{eps:.6f}"


def format_accuracy(acc: float) -> str:
    return f"{acc:.2f}"


@dataclass(frozen=True)
class FaultSpec:
    """One stuck-at configuration.

    Args:
        layer: Injection point index.
        kind: ``channel`` or ``pixel``.
        target: Channel index, or ``(h, w)`` for a pixel.
        value: Stuck value; must belong to the point's activation codebook.
    """

    layer: int
    kind: TargetKind
    target: Union[int, Tuple[int, int]]
    value: float

    def apply(self, activation: Tensor4) -> Tensor4:
        """Return a copy of ``activation`` with the target clamped to ``value``."""
        out = np.array(activation, dtype=np.float32, copy=True)
        if self.kind is TargetKind.CHANNEL:
            out[:, self.target, :, :] = self.value
        else:
            h, w = self.target
            out[:, :, h, w] = self.value
        return out

    def validate(self, net: Network) -> None:
        if not 0 <= self.layer < len(net.injection_points):
            raise ConfigurationError(
                f"Fault layer {self.layer} out of range; network has "
                f"{len(net.injection_points)} injection points"
            )
        channels, height, width = net.injection_points[self.layer].shape
        if self.kind is TargetKind.CHANNEL:
            if not 0 <= self.target < channels:
                raise ConfigurationError(
                    f"Channel {self.target} out of range for layer {self.layer} "
                    f"with {channels} channels"
                )
        else:
            h, w = self.target
            if not (0 <= h < height and 0 <= w < width):
                raise ConfigurationError(
                    f"Pixel ({h}, {w}) out of range for layer {self.layer} "
                    f"with a {height}x{width} feature map"
                )
        codebook = net.point_codebook(self.layer)
        if self.value not in codebook:
            raise ConfigurationError(
                f"Stuck value {self.value} is not in the {codebook.bitwidth}-bit "
                f"codebook {codebook.values}"
            )

    def target_index(self, width: int) -> int:
        """Channel index, or the pixel flattened as ``h * width + w``."""
        if self.kind is TargetKind.CHANNEL:
            return int(self.target)
        h, w = self.target
        return h * width + w

    def to_dict(self) -> Dict:
        target = list(self.target) if self.kind is TargetKind.PIXEL else self.target
        return {"layer": self.layer, "target_kind": self.kind.value, "target": target,
                "epsilon": self.value}

    @classmethod
    def from_dict(cls, data: Dict) -> "FaultSpec":
        kind = parse_target_kind(data["target_kind"])
        target = tuple(data["target"]) if kind is TargetKind.PIXEL else int(data["target"])
        return cls(int(data["layer"]), kind, target, float(data["epsilon"]))

    def __str__(self) -> str:
        return f"L{self.layer} {self.kind.value} {self.target} s@{self.value:g}"


@dataclass
class SweepReport:
    """Accuracy of every configuration of one sweep.

    ``points`` describes the injection points the sweep covered (``index``
    and ``shape``); ``metadata["timing"]`` holds the only run-dependent fields.
    """

    mode: TargetKind
    error_free: float
    faults: List[FaultSpec]
    accuracies: List[float]
    codebook: Tuple[float, ...]
    points: List[Dict] = field(default_factory=list)
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.mode = parse_target_kind(self.mode)
        if len(self.faults) != len(self.accuracies):
            raise ConfigurationError(
                f"{len(self.faults)} faults but {len(self.accuracies)} accuracies"
            )

    def __len__(self) -> int:
        return len(self.faults)

    @property
    def entries(self) -> List[Tuple[FaultSpec, float]]:
        return list(zip(self.faults, self.accuracies))

    def _values(self) -> np.ndarray:
        if not self.accuracies:
            raise ConfigurationError("Sweep report has no configurations")
        return np.asarray(self.accuracies, dtype=np.float64)

    @property
    def min_accuracy(self) -> float:
        return float(self._values().min())

    @property
    def max_accuracy(self) -> float:
        return float(self._values().max())

    @property
    def mean_accuracy(self) -> float:
        return float(self._values().mean())

    @property
    def variance(self) -> float:
        """Population variance of all configuration accuracies."""
        return float(self._values().var())

    def point_width(self, layer: int) -> int:
        for point in self.points:
            if point["index"] == layer:
                return int(point["shape"][2])
        raise ConfigurationError(f"Layer {layer} is not part of this sweep")

    def target_index(self, fault: FaultSpec) -> int:
        if fault.kind is TargetKind.CHANNEL:
            return int(fault.target)
        return fault.target_index(self.point_width(fault.layer))

    def layer_extremes(self) -> Dict[Tuple[int, float], Tuple[float, float]]:
        """Min and max accuracy per ``(layer, eps)``, ordered by layer then value."""
        groups: Dict[Tuple[int, float], List[float]] = {}
        for fault, acc in self.entries:
            groups.setdefault((fault.layer, fault.value), []).append(acc)
        return {key: (min(groups[key]), max(groups[key])) for key in sorted(groups)}

    def to_dict(self) -> Dict:
        configurations = []
        for fault, acc in self.entries:
            row = fault.to_dict()
            row["target_index"] = self.target_index(fault)
            row["accuracy"] = acc
            configurations.append(row)
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "mode": self.mode.value,
            "error_free": self.error_free,
            "codebook": list(self.codebook),
            "points": self.points,
            "summary": {
                "count": len(self),
                "min": self.min_accuracy if self.accuracies else None,
                "max": self.max_accuracy if self.accuracies else None,
                "variance": self.variance if self.accuracies else None,
            },
            "metadata": self.metadata,
            "configurations": configurations,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SweepReport":
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ConfigurationError(
                f"Unsupported sweep report schema version {data.get('schema_version')}"
            )
        rows = data["configurations"]
        return cls(
            mode=data["mode"],
            error_free=float(data["error_free"]),
            faults=[FaultSpec.from_dict(row) for row in rows],
            accuracies=[float(row["accuracy"]) for row in rows],
            codebook=tuple(data["codebook"]),
            points=data.get("points", []),
            metadata=data.get("metadata", {}),
        )


# ---------------------------------------------------------------------------
# Accuracy
# ---------------------------------------------------------------------------


def accuracy(
    net: Network,
    data: LabeledSet,
    fault: Optional[FaultSpec] = None,
    batch_size: int = EVAL_BATCH,
) -> float:
    """Top-1 accuracy in percent over every sample of ``data``.

    Raises:
        ConfigurationError: empty data or a fault that does not fit ``net``.
    """
    if len(data) == 0:
        raise ConfigurationError("Cannot measure accuracy on an empty dataset")
    if fault is not None:
        fault.validate(net)
    predictions = net.predict(data.images, fault=fault, batch_size=batch_size)
    return 100.0 * float(np.count_nonzero(predictions == data.labels)) / len(data)


def enumerate_faults(
    net: Network, mode, layers: Optional[Sequence[int]] = None
) -> List[FaultSpec]:
    """Every configuration of a sweep: values outermost, then layers, then targets."""
    mode = parse_target_kind(mode)
    points = net.injection_points
    if layers is None:
        layers = range(len(points))
    layers = sorted(set(int(i) for i in layers))
    for i in layers:
        if not 0 <= i < len(points):
            raise ConfigurationError(
                f"Layer {i} out of range; network has {len(points)} injection points"
            )
    if not layers:
        return []
    codebooks = {i: net.point_codebook(i) for i in layers}
    values = codebooks[layers[0]].values
    if not values:
        raise ConfigurationError("Cannot sweep float activations; use 1-4 activation bits")
    if any(codebooks[i].values != values for i in layers):
        raise ConfigurationError("All swept layers must share one activation codebook")

    faults = []
    for eps in values:
        for i in layers:
            channels, height, width = points[i].shape
            if mode is TargetKind.CHANNEL:
                targets = range(channels)
            else:
                targets = [(h, w) for h in range(height) for w in range(width)]
            faults.extend(FaultSpec(i, mode, t, eps) for t in targets)
    return faults


def count_correct(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray,
    faults: Sequence[FaultSpec],
    batch_size: int = EVAL_BATCH,
) -> np.ndarray:
    """Correct predictions per fault, reusing prefix activations per injection point."""
    correct = np.zeros(len(faults), dtype=np.int64)
    groups: Dict[int, List[int]] = {}
    for pos, fault in enumerate(faults):
        groups.setdefault(fault.layer, []).append(pos)
    end = len(net.layers)
    for layer, positions in groups.items():
        split = net.injection_points[layer].layer_index + 1
        for start in range(0, images.shape[0], batch_size):
            prefix = net.forward_range(as_tensor4(images[start : start + batch_size]), 0, split)
            y = labels[start : start + batch_size]
            for pos in positions:
                logits = net.forward_range(faults[pos].apply(prefix), split, end)
                predicted = logits.reshape(logits.shape[0], -1).argmax(axis=1)
                correct[pos] += int(np.count_nonzero(predicted == y))
    return correct


# Worker-process state, set once per worker by the pool initializer.
_WORKER: Dict = {}


def _init_worker(net: Network, images: np.ndarray, labels: np.ndarray, batch_size: int):
    _WORKER.update(net=net, images=images, labels=labels, batch_size=batch_size)


def _count_chunk(faults: Sequence[FaultSpec]) -> np.ndarray:
    return count_correct(
        _WORKER["net"], _WORKER["images"], _WORKER["labels"], faults, _WORKER["batch_size"]
    )


def _chunks(items: Sequence, n_chunks: int) -> List[Sequence]:
    size = max(1, math.ceil(len(items) / max(n_chunks, 1)))
    return [items[i : i + size] for i in range(0, len(items), size)]


def network_id(net: Network) -> str:
    meta = net.metadata
    parts = [str(meta.get("topology", "custom"))]
    if "weight_bits" in meta:
        parts.append(f"w{meta['weight_bits']}a{meta.get('act_bits')}")
    if "method" in meta:
        parts.append(str(meta["method"]))
    return "_".join(parts)


def sweep(
    net: Network,
    data: LabeledSet,
    mode="channel",
    layers: Optional[Sequence[int]] = None,
    workers: int = 1,
    batch_size: int = EVAL_BATCH,
    progress: bool = False,
    metadata: Optional[Dict] = None,
    debug: bool = False,
    logger=None,
) -> SweepReport:
    """Run an exhaustive single-fault sweep.

    Args:
        net: Frozen network; it is only read.
        data: Evaluation samples.
        mode: ``channel`` or ``pixel``.
        layers: Injection point indices to sweep; all when None.
        workers: Worker processes. Results do not depend on this value.
        batch_size: Evaluation batch size.
        progress: Show a tqdm progress bar.
        metadata: Extra fields merged into the report metadata.
        debug: Enable debug logging for this call.
        logger: Optional logger backend for debug output.

    Returns:
        SweepReport with one accuracy per configuration in enumeration order.
    """
    mode = parse_target_kind(mode)
    if len(data) == 0:
        raise ConfigurationError("Cannot sweep on an empty dataset")
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}")

    with debug_session(debug, logger) as log:
        started = datetime.now(timezone.utc)
        clock = time.perf_counter()
        faults = enumerate_faults(net, mode, layers)
        log.log_step("SWEEP", f"{mode.value} mode, {len(faults)} configurations, "
                              f"{len(data)} samples, {workers} worker(s)")
        error_free = accuracy(net, data, batch_size=batch_size)
        log.log_step("ERROR-FREE", f"{error_free:.2f}")

        if workers == 1:
            chunks = _chunks(faults, max(1, len(faults) // 64))
            counts = [
                count_correct(net, data.images, data.labels, chunk, batch_size)
                for chunk in tqdm(chunks, desc=f"{mode.value} sweep", disable=not progress)
            ]
        else:
            chunks = _chunks(faults, workers * 4)
            with ProcessPoolExecutor(
                max_workers=workers,
                initializer=_init_worker,
                initargs=(net, data.images, data.labels, batch_size),
            ) as pool:
                counts = list(
                    tqdm(pool.map(_count_chunk, chunks), total=len(chunks),
                         desc=f"{mode.value} sweep", disable=not progress)
                )
        correct = np.concatenate(counts) if counts else np.zeros(0, dtype=np.int64)
        accuracies = [100.0 * int(c) / len(data) for c in correct]
        for fault, acc in zip(faults, accuracies):
            log.log_fault(fault, acc)

        swept = sorted({f.layer for f in faults})
        points = [{"index": i, "layer_index": net.injection_points[i].layer_index,
                   "shape": list(net.injection_points[i].shape)} for i in swept]
        codebook = net.point_codebook(swept[0]).values if swept else ()
        info = {
            "network": network_id(net),
            "network_metadata": dict(net.metadata),
            "mode": mode.value,
            "eval_samples": len(data),
            "layers": swept,
        }
        info.update(metadata or {})
        info["timing"] = {
            "started_at": started.isoformat(),
            "wall_time_s": round(time.perf_counter() - clock, 3),
            "workers": workers,
        }
        return SweepReport(mode, error_free, faults, accuracies, tuple(codebook), points, info)


def sweep_channels(net: Network, data: LabeledSet, **kwargs) -> SweepReport:
    """Channel stuck-at sweep; see ``sweep``."""
    return sweep(net, data, TargetKind.CHANNEL, **kwargs)


def sweep_pixels(net: Network, data: LabeledSet, **kwargs) -> SweepReport:
    """Pixel stuck-at sweep; every channel of a position is clamped together."""
    return sweep(net, data, TargetKind.PIXEL, **kwargs)


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------


@dataclass
class SummaryRow:
    layer: int
    targets: int
    extremes: Dict[float, Tuple[float, float]]


@dataclass
class ScatterPoint:
    min_acc: float
    max_acc: float
    error_free: float


@dataclass
class SweepSummary:
    rows: List[SummaryRow]
    scatter: ScatterPoint
    codebook: Tuple[float, ...]


def summarize(report: SweepReport) -> SweepSummary:
    """Per-layer min/max per stuck value plus the global scatter point.

    Layers without configurations do not get a row.
    """
    targets: Dict[int, set] = {}
    for fault in report.faults:
        targets.setdefault(fault.layer, set()).add(fault.target)
    extremes = report.layer_extremes()
    rows = []
    for layer in sorted(targets):
        per_value = {eps: extremes[(layer, eps)] for eps in report.codebook
                     if (layer, eps) in extremes}
        rows.append(SummaryRow(layer, len(targets[layer]), per_value))
    return SweepSummary(
        rows=rows,
        scatter=ScatterPoint(report.min_accuracy, report.max_accuracy, report.error_free),
        codebook=tuple(report.codebook),
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def _open_for_write(path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path, path.open("w", newline="")


def write_report_csv(report: SweepReport, path: Union[str, Path]) -> Path:
    path, fh = _open_for_write(path)
    with fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for fault, acc in report.entries:
            writer.writerow([
                fault.layer,
                fault.kind.value,
                report.target_index(fault),
                format_epsilon(fault.value),
                format_accuracy(acc),
            ])
    return path


def read_report_csv(path: Union[str, Path]) -> List[Dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ConfigurationError(f"{path} is not a sweep report; header {reader.fieldnames}")
        rows = []
        for row in reader:
            acc = float(row["accuracy"])
            if not 0.0 <= acc <= 100.0:
                raise ConfigurationError(f"{path}: accuracy {acc} outside [0, 100]")
            rows.append({
                "layer": int(row["layer"]),
                "target_kind": parse_target_kind(row["target_kind"]).value,
                "target_index": int(row["target_index"]),
                "epsilon": float(row["epsilon"]),
                "accuracy": acc,
            })
        return rows


def write_report_json(report: SweepReport, path: Union[str, Path]) -> Path:
    path, fh = _open_for_write(path)
    with fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_report_json(path: Union[str, Path]) -> SweepReport:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Sweep report not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path} is not valid JSON: {exc}") from None
    return SweepReport.from_dict(data)


def summary_columns(codebook: Iterable[float]) -> List[str]:
    columns = ["layer", "targets"]
    for eps in codebook:
        columns += [f"min_s@{format_epsilon(eps)}", f"max_s@{format_epsilon(eps)}"]
    return columns


def write_summary_csv(summary: SweepSummary, path: Union[str, Path]) -> Path:
    path, fh = _open_for_write(path)
    with fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(summary_columns(summary.codebook))
        for row in summary.rows:
            cells = [row.layer, row.targets]
            for eps in summary.codebook:
                low, high = row.extremes.get(eps, (math.nan, math.nan))
                cells += [format_accuracy(low), format_accuracy(high)]
            writer.writerow(cells)
    return path


def read_summary_csv(path: Union[str, Path]) -> List[Dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if header[:2] != ["layer", "targets"]:
            raise ConfigurationError(f"{path} is not a sweep summary; header {header}")
        return [
            {k: (int(v) if k in ("layer", "targets") else float(v)) for k, v in row.items()}
            for row in reader
        ]


def write_scatter_csv(points: Dict[str, ScatterPoint], path: Union[str, Path]) -> Path:
    """One row per network: name, min, max and error-free accuracy."""
    path, fh = _open_for_write(path)
    with fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCATTER_COLUMNS)
        for name, point in points.items():
            writer.writerow([name, format_accuracy(point.min_acc),
                             format_accuracy(point.max_acc), format_accuracy(point.error_free)])
    return path


def read_scatter_csv(path: Union[str, Path]) -> Dict[str, ScatterPoint]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCATTER_COLUMNS:
            raise ConfigurationError(f"{path} is not a scatter file; header {reader.fieldnames}")
        return {
            row["name"]: ScatterPoint(float(row["min_acc"]), float(row["max_acc"]),
                                      float(row["error_free"]))
            for row in reader
        }

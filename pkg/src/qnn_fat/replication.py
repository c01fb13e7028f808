"""Selective channel replication (TMR) from a channel sweep.

Channels are ranked by the worst accuracy any stuck value on them causes.
Triplicating a channel masks its single faults (majority vote), so its
configurations drop out of the worst case. The hardware cost of a channel is
the number of MACs that produce its output feature map times the weight and
activation bit widths; a triplicated channel costs ``multiplier`` times that.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError
from .evaluation import SweepReport, TargetKind
from .layers import LayerKind, LayerSpec
from .network import Network

TMR_MULTIPLIER = 3
FRONTIER_COLUMNS = ("k", "triplicated_channels_list_hash", "cost", "worst_case_error", "dominated")
COST_UNIT = "LUT-equivalents"

Channel = Tuple[int, int]


@dataclass(frozen=True)
class ChannelCriticality:
    layer: int
    channel: int
    worst_accuracy: float

    @property
    def worst_case_error(self) -> float:
        return 100.0 - self.worst_accuracy

    @property
    def key(self) -> Channel:
        return (self.layer, self.channel)


@dataclass(frozen=True)
class ReplicationPlan:
    """Set of ``(injection point, channel)`` pairs to triplicate."""

    channels: FrozenSet[Channel] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "channels", frozenset((int(l), int(c)) for l, c in self.channels))

    @property
    def k(self) -> int:
        return len(self.channels)

    def with_channel(self, channel: Channel) -> "ReplicationPlan":
        return ReplicationPlan(self.channels | {channel})

    def digest(self) -> str:
        return plan_hash(self.channels)

    def validate(self, net: Network) -> None:
        points = net.injection_points
        bad = [
            f"{l}:{c}" for l, c in sorted(self.channels)
            if not (0 <= l < len(points) and 0 <= c < points[l].channels)
        ]
        if bad:
            raise ConfigurationError("Plan names channels the network does not have", bad)


def plan_hash(channels: Iterable[Channel]) -> str:
    """Short SHA-256 of the sorted channel list."""
    text = ";".join(f"{l}:{c}" for l, c in sorted(channels))
    return hashlib.sha256(text.encode("ascii")).hexdigest()[:16]


def channel_cost(
    spec: LayerSpec, weight_bits: int, act_bits: int, ofm_hw: Tuple[int, int] = (1, 1)
) -> int:
    """Cost of one output channel of a conv or FC layer.

    MACs are ``k * k * C_in * H_out * W_out`` for a convolution and the
    fan-in for a fully connected neuron.
    """
    if spec.kind is LayerKind.CONV2D:
        h, w = ofm_hw
        macs = spec.kernel_size * spec.kernel_size * spec.in_channels * h * w
    elif spec.kind is LayerKind.FULLY_CONNECTED:
        macs = spec.in_features
    else:
        raise ConfigurationError(f"{spec.kind} layers have no channel cost")
    return int(macs * weight_bits * act_bits)


@dataclass
class CostModel:
    """Per-channel cost table of one topology.

    Keys are ``(injection point, channel)``. The table is built once per
    topology and shared by every training method.
    """

    costs: Dict[Channel, int]
    multiplier: float = TMR_MULTIPLIER
    weight_bits: Optional[int] = None
    act_bits: Optional[int] = None
    include_fc: bool = True
    unit: str = COST_UNIT

    def __post_init__(self):
        bad = [f"{l}:{c}" for (l, c), cost in sorted(self.costs.items()) if cost <= 0]
        if bad:
            raise ConfigurationError("Channel costs must be positive", bad)
        if self.multiplier <= 1:
            raise ConfigurationError(f"Replication multiplier must exceed 1, got {self.multiplier}")

    @classmethod
    def from_network(
        cls,
        net: Network,
        weight_bits: Optional[int] = None,
        act_bits: Optional[int] = None,
        include_fc: bool = True,
        multiplier: float = TMR_MULTIPLIER,
    ) -> "CostModel":
        """Cost table for every channel of every injection point of ``net``.

        Bit widths default to the producing layer's weight bits and the
        network's activation bits.
        """
        costs = {}
        for point in net.injection_points:
            producer = net.layers[point.producer_index].spec
            if producer.kind is LayerKind.FULLY_CONNECTED and not include_fc:
                continue
            w = weight_bits or producer.weight_bits
            a = act_bits or net.metadata.get("act_bits") or net.point_codebook(point.index).bitwidth
            ofm = net.output_shapes[point.producer_index]
            cost = channel_cost(producer, w, a, (ofm[2], ofm[3]))
            for c in range(point.channels):
                costs[(point.index, c)] = cost
        return cls(costs, multiplier, weight_bits, act_bits, include_fc)

    @property
    def baseline(self) -> int:
        return int(sum(self.costs.values()))

    def cost_of(self, channel: Channel) -> int:
        if channel not in self.costs:
            raise ConfigurationError(f"Channel {channel[0]}:{channel[1]} has no cost entry")
        return self.costs[channel]

    def plan_cost(self, plan: ReplicationPlan) -> float:
        extra = sum(self.cost_of(ch) for ch in plan.channels)
        return self.baseline + (self.multiplier - 1) * extra

    def to_dict(self) -> Dict:
        return {"multiplier": self.multiplier, "weight_bits": self.weight_bits,
                "act_bits": self.act_bits, "include_fc": self.include_fc,
                "unit": self.unit, "baseline": self.baseline, "channels": len(self.costs)}


def plan_cost(net: Network, plan: ReplicationPlan, cost_model: Optional[CostModel] = None) -> float:
    """Sum of every channel's cost, triplicated channels counted ``multiplier`` times."""
    plan.validate(net)
    if cost_model is None:
        cost_model = CostModel.from_network(net)
    return cost_model.plan_cost(plan)


def _require_channel_report(report: SweepReport) -> None:
    if report.mode is not TargetKind.CHANNEL:
        raise ConfigurationError(
            f"Replication analysis needs a channel sweep, got a {report.mode.value} sweep"
        )


def rank_channels(report: SweepReport) -> List[ChannelCriticality]:
    """Channels from most to least critical.

    Criticality is the minimum accuracy over stuck values; ties are broken
    by ``(layer, channel)``.
    """
    _require_channel_report(report)
    worst: Dict[Channel, float] = {}
    for fault, acc in report.entries:
        key = (fault.layer, int(fault.target))
        worst[key] = min(acc, worst.get(key, acc))
    ranked = sorted(worst.items(), key=lambda item: (item[1], item[0]))
    return [ChannelCriticality(l, c, acc) for (l, c), acc in ranked]


def worst_case_error(report: SweepReport, plan: ReplicationPlan) -> float:
    """``100 - min accuracy`` over configurations whose channel is not triplicated.

    The error-free accuracy always enters the minimum, so a plan covering
    every channel yields ``100 - error_free``.
    """
    _require_channel_report(report)
    unprotected = [
        acc for fault, acc in report.entries
        if (fault.layer, int(fault.target)) not in plan.channels
    ]
    return 100.0 - min([report.error_free] + unprotected)


@dataclass
class FrontierPoint:
    k: int
    plan_hash: str
    cost: float
    worst_case_error: float
    dominated: bool = False
    channels: Tuple[Channel, ...] = field(default=())


def _mark_dominated(points: List[FrontierPoint]) -> None:
    cost = np.array([p.cost for p in points])
    error = np.array([p.worst_case_error for p in points])
    for i, p in enumerate(points):
        no_worse = (cost <= cost[i]) & (error <= error[i])
        better = (cost < cost[i]) | (error < error[i])
        p.dominated = bool(np.any(no_worse & better))


def pareto_frontier(
    net: Network, report: SweepReport, cost_model: Optional[CostModel] = None
) -> List[FrontierPoint]:
    """One point per prefix of the criticality ranking, ``k = 0 .. N``.

    Only channels with a cost entry can be triplicated; faults on other
    swept channels always stay in the worst case.
    """
    _require_channel_report(report)
    if cost_model is None:
        cost_model = CostModel.from_network(net)
    ranked = rank_channels(report)
    ranking = [c for c in ranked if c.key in cost_model.costs]
    fixed = [c.worst_accuracy for c in ranked if c.key not in cost_model.costs]
    floor = min([report.error_free] + fixed)

    # suffix[k] = worst accuracy among channels ranked k and later.
    suffix = np.full(len(ranking) + 1, np.inf)
    for k in range(len(ranking) - 1, -1, -1):
        suffix[k] = min(suffix[k + 1], ranking[k].worst_accuracy)

    points, chosen, cost = [], [], float(cost_model.baseline)
    for k in range(len(ranking) + 1):
        if k:
            chosen.append(ranking[k - 1].key)
            cost += (cost_model.multiplier - 1) * cost_model.cost_of(ranking[k - 1].key)
        wce = 100.0 - min(floor, suffix[k])
        points.append(FrontierPoint(k, plan_hash(chosen), cost, wce, channels=tuple(chosen)))
    _mark_dominated(points)
    return points


def frontier_dominates(a: Sequence[FrontierPoint], b: Sequence[FrontierPoint]) -> bool:
    """True when ``a`` is no more expensive than ``b`` at every worst-case-error
    level both frontiers reach.

    Points of ``b`` below the lowest worst-case error ``a`` ever reaches are not
    compared, so frontiers with different error-free floors can still dominate.
    """
    if not a:
        return False
    floor = min(p.worst_case_error for p in a) - 1e-9
    common = [q for q in b if q.worst_case_error >= floor]
    if not common:
        return False
    for q in common:
        costs = [p.cost for p in a if p.worst_case_error <= q.worst_case_error + 1e-9]
        if min(costs) > q.cost:
            return False
    return True


def channels_for_error(frontier: Sequence[FrontierPoint], target: float) -> Optional[int]:
    """Smallest ``k`` whose worst-case error is at most ``target``."""
    for point in sorted(frontier, key=lambda p: p.k):
        if point.worst_case_error <= target + 1e-9:
            return point.k
    return None


def write_frontier_csv(frontier: Sequence[FrontierPoint], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FRONTIER_COLUMNS)
        for p in frontier:
            writer.writerow([p.k, p.plan_hash, f"{p.cost:.0f}", f"{p.worst_case_error:.2f}",
                             str(p.dominated).lower()])
    return path


def read_frontier_csv(path: Union[str, Path]) -> List[FrontierPoint]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FRONTIER_COLUMNS:
            raise ConfigurationError(f"{path} is not a frontier file; header {reader.fieldnames}")
        points = []
        for row in reader:
            if row["dominated"] not in ("true", "false"):
                raise ConfigurationError(f"{path}: dominated must be true or false")
            points.append(FrontierPoint(
                int(row["k"]), row["triplicated_channels_list_hash"], float(row["cost"]),
                float(row["worst_case_error"]), row["dominated"] == "true",
            ))
        return points


WORST_CASE_ERROR_DEFINITION = (
    "100 - min(error_free, accuracies of faults on untriplicated channels); "
    "faults that beat the error-free accuracy never lower the error below 100 - error_free"
)


def write_frontier_json(
    frontier: Sequence[FrontierPoint], cost_model: CostModel, path: Union[str, Path],
    metadata: Optional[Dict] = None,
) -> Path:
    """Frontier with the full channel list of each plan and the cost-model settings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "cost_model": cost_model.to_dict(),
        "metadata": metadata or {},
        "worst_case_error": WORST_CASE_ERROR_DEFINITION,
        "points": [
            {"k": p.k, "plan_hash": p.plan_hash, "cost": p.cost,
             "worst_case_error": p.worst_case_error, "dominated": p.dominated,
             "channels": [list(ch) for ch in p.channels]}
            for p in frontier
        ],
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path

"""
qnn-fat - Fault-aware training and stuck-at fault analysis for quantized CNNs

This package provides:
- Quantized CNN building blocks (conv, FC, batch norm, max pool, 1-4 bit
  activation and weight quantizers with a straight-through estimator)
- Training-time error injection layers (element, channel and pixel models)
  and the Dropout / Dropout2D baselines
- Standard training (SAT) and fault-aware training (FAT, two methods)
- Exhaustive channel and pixel stuck-at sweeps with parallel workers
- Selective channel replication (TMR) cost vs worst-case error frontiers

Example usage:
    >>> from qnn_fat import TrainConfig, load_dataset, train, sweep_channels
    >>> data = load_dataset("~/data/mnist", "idx")
    >>> result = train(TrainConfig(method="fat2", p=5, epochs=30), data)
    >>> report = sweep_channels(result.network, data.test.subset(1000))
    >>> print(report.min_accuracy, report.variance)
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .datasets import DatasetHandle, LabeledSet, load_dataset
from .debug_logger import DebugLogger, StringLogger
from .errors import (
    CheckpointError,
    ConfigurationError,
    DatasetFormatError,
    DivergenceError,
    QnnFatError,
)
from .evaluation import (
    FaultSpec,
    SweepReport,
    TargetKind,
    accuracy,
    summarize,
    sweep,
    sweep_channels,
    sweep_pixels,
)
from .injection import FaultModel, InjectionConfig, inject_backward, inject_forward
from .network import Network, build_network
from .quantization import QuantCodebook, make_codebook, quantize
from .replication import (
    ChannelCriticality,
    CostModel,
    ReplicationPlan,
    channel_cost,
    pareto_frontier,
    plan_cost,
    rank_channels,
    worst_case_error,
)
from .training import EpochPlan, TrainConfig, lr_schedule, select_epoch_layer, train

__version__ = "0.1.0"
__description__ = "Fault-aware training and stuck-at fault analysis for quantized CNNs"

__all__ = [
    "TrainConfig",
    "EpochPlan",
    "train",
    "lr_schedule",
    "select_epoch_layer",
    "Network",
    "build_network",
    "QuantCodebook",
    "make_codebook",
    "quantize",
    "FaultModel",
    "InjectionConfig",
    "inject_forward",
    "inject_backward",
    "FaultSpec",
    "TargetKind",
    "SweepReport",
    "accuracy",
    "sweep",
    "sweep_channels",
    "sweep_pixels",
    "summarize",
    "ChannelCriticality",
    "ReplicationPlan",
    "CostModel",
    "channel_cost",
    "plan_cost",
    "rank_channels",
    "worst_case_error",
    "pareto_frontier",
    "ExperimentConfig",
    "load_config",
    "DatasetHandle",
    "LabeledSet",
    "load_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "QnnFatError",
    "ConfigurationError",
    "DatasetFormatError",
    "CheckpointError",
    "DivergenceError",
    "StringLogger",
    "DebugLogger",
]

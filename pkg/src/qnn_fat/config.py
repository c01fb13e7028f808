"""Experiment configuration files.

A config file is a flat YAML mapping. Every key maps onto a field of
``ExperimentConfig``; unknown keys are rejected and missing required keys
are reported together::

    method: fat2
    p: 5
    dataset: mnist
    data_path: ~/data/mnist
    epochs: 30
    eval_subset_size: 1000
"""

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import yaml

from .datasets import FORMATS
from .errors import ConfigurationError
from .evaluation import parse_target_kind
from .training import TrainConfig

REQUIRED_KEYS = ("method", "dataset")


@dataclass
class ExperimentConfig:
    method: str
    dataset: str
    p: Optional[float] = None
    fault_model: str = "channel"
    epochs: int = 30
    batch_size: int = 100
    initial_lr: float = 0.02
    lr_halving_period: int = 40
    weight_decay: float = 0.0
    seed: int = 0
    topology: str = "cnv-s"
    weight_bits: int = 1
    act_bits: int = 1
    fc_hidden: int = 128
    train_subset_size: Optional[int] = None
    checkpoint_every: int = 0
    dataset_format: str = "idx"
    data_path: Optional[str] = None
    sweep_mode: str = "channel"
    sweep_layers: Optional[List[int]] = None
    eval_subset_size: Optional[int] = 1000
    workers: Optional[int] = None
    output_dir: str = "results"
    cost_multiplier: float = 3.0
    cost_include_fc: bool = True
    cost_weight_bits: Optional[int] = None
    cost_act_bits: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method != "sat" and self.p is None:
            raise ConfigurationError(f"Method {self.method} needs an injection percentage",
                                     ["p"])
        if self.dataset_format not in FORMATS:
            raise ConfigurationError(
                f"Unknown dataset_format '{self.dataset_format}'; expected one of {FORMATS}"
            )
        parse_target_kind(self.sweep_mode)
        for name in ("eval_subset_size", "train_subset_size", "workers"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")
        if self.checkpoint_every < 0:
            raise ConfigurationError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        self.to_train_config()

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            method=self.method,
            p=self.p if self.p is not None else 0.0,
            fault_model=self.fault_model,
            epochs=self.epochs,
            batch_size=self.batch_size,
            initial_lr=self.initial_lr,
            lr_halving_period=self.lr_halving_period,
            weight_decay=self.weight_decay,
            seed=self.seed,
            dataset=self.dataset,
            topology=self.topology,
            weight_bits=self.weight_bits,
            act_bits=self.act_bits,
            fc_hidden=self.fc_hidden,
            train_subset_size=self.train_subset_size,
            eval_subset_size=self.eval_subset_size,
            checkpoint_every=self.checkpoint_every,
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_KNOWN = {f.name: f for f in fields(ExperimentConfig)}


def _check_type(key: str, value: Any) -> Any:
    default = _KNOWN[key].default
    if value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"Config key '{key}' must be true or false, got {value!r}")
        return value
    if isinstance(default, int) or key in ("train_subset_size", "eval_subset_size", "workers",
                                            "cost_weight_bits", "cost_act_bits"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"Config key '{key}' must be an integer, got {value!r}")
        return value
    if isinstance(default, float) or key == "p":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"Config key '{key}' must be a number, got {value!r}")
        return float(value)
    if key == "sweep_layers":
        if not isinstance(value, list) or not all(isinstance(v, int) for v in value):
            raise ConfigurationError(f"Config key '{key}' must be a list of integers")
        return value
    return str(value)


def config_from_mapping(
    data: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    """Validate a mapping (plus non-None overrides) into an ``ExperimentConfig``."""
    if not isinstance(data, Mapping):
        raise ConfigurationError("Experiment config must be a mapping of keys to values")
    merged = dict(data)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(merged) - set(_KNOWN)
    if unknown:
        raise ConfigurationError("Unknown config keys", unknown)
    missing = [k for k in REQUIRED_KEYS if merged.get(k) is None]
    if missing:
        raise ConfigurationError("Missing required config keys", missing)
    return ExperimentConfig(**{k: _check_type(k, v) for k, v in merged.items()})


def load_config(
    path: Union[str, Path], overrides: Optional[Mapping[str, Any]] = None
) -> ExperimentConfig:
    """Read and validate a YAML experiment config.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        ConfigurationError: unparsable YAML, unknown or missing keys, bad values.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"Cannot parse {path}: {exc}") from None
    return config_from_mapping(data if data is not None else {}, overrides)


def dump_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))
    return path

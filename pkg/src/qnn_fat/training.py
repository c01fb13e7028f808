"""Standard training (SAT), fault-aware training (FAT) and the Dropout2D baseline.

* ``sat``  - every slot layer disabled; plain quantization-aware training.
* ``fat1`` - every injection layer enabled with a fixed ``p``.
* ``fat2`` - each epoch one injection layer, chosen uniformly at random, is
  enabled and all others are disabled.
* ``dropout2d-baseline`` - ``fat1`` with every injection layer replaced by a
  Dropout2D layer of probability ``p / 100``.

All methods run exactly the same number of optimizer steps per epoch.
"""

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from .checkpoint import save_checkpoint
from .datasets import DatasetHandle, LabeledSet
from .debug_logger import debug_session
from .errors import ConfigurationError, DivergenceError
from .evaluation import accuracy
from .injection import parse_fault_model
from .loss import squared_hinge_loss
from .network import TOPOLOGIES, Network, build_network
from .optim import Adam, AdamHyper
from .quantization import FLOAT_BITWIDTH, SUPPORTED_BITWIDTHS
from .seeding import stream

METHODS = ("sat", "fat1", "fat2", "dropout2d-baseline")
LOG_COLUMNS = ("epoch", "loss", "test_acc", "lr", "enabled_layer", "steps")


@dataclass
class TrainConfig:
    """Hyper-parameters of one training run. ``p`` is a percentage."""

    method: str = "sat"
    p: float = 0.0
    fault_model: str = "channel"
    epochs: int = 30
    batch_size: int = 100
    initial_lr: float = 0.02
    lr_halving_period: int = 40
    weight_decay: float = 0.0
    seed: int = 0
    dataset: str = "mnist"
    topology: str = "cnv-s"
    weight_bits: int = 1
    act_bits: int = 1
    fc_hidden: int = 128
    train_subset_size: Optional[int] = None
    eval_subset_size: Optional[int] = 1000
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigurationError(f"Unknown training method '{self.method}'; "
                                     f"expected one of {METHODS}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_halving_period < 1:
            raise ConfigurationError(
                f"lr_halving_period must be >= 1, got {self.lr_halving_period}"
            )
        if self.topology not in TOPOLOGIES:
            raise ConfigurationError(f"Unknown topology '{self.topology}'")
        valid_bits = SUPPORTED_BITWIDTHS + (FLOAT_BITWIDTH,)
        for name in ("weight_bits", "act_bits"):
            if getattr(self, name) not in valid_bits:
                raise ConfigurationError(f"{name} must be one of {valid_bits}")
        if self.method != "sat":
            if not 0.0 <= self.p <= 100.0:
                raise ConfigurationError(f"p must be a percentage in [0, 100], got {self.p}")
            if self.method == "dropout2d-baseline" and self.p >= 100.0:
                raise ConfigurationError("Dropout2D p must be below 100 percent")
            if self.method in ("fat1", "fat2") and self.act_bits == FLOAT_BITWIDTH:
                raise ConfigurationError("FAT needs quantized activations (act_bits 1-4)")
        self.fault_model = parse_fault_model(self.fault_model).value

    @property
    def slot(self) -> str:
        return "dropout2d" if self.method == "dropout2d-baseline" else "injection"

    @property
    def run_name(self) -> str:
        """File stem shared by every artifact of this run.

        Runs that inject or drop carry their percentage, and FAT runs their fault
        model, so p sweeps and fault-model variants can share one output directory.
        """
        name = f"{self.topology}_w{self.weight_bits}a{self.act_bits}_{self.method}"
        if self.method == "sat":
            return name
        name += f"_p{self.p:g}"
        if self.method in ("fat1", "fat2"):
            name += f"_{self.fault_model}"
        return name

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochPlan:
    """Slot statuses for one epoch."""

    epoch: int
    statuses: tuple

    @property
    def enabled_label(self) -> str:
        enabled = [i for i, on in enumerate(self.statuses) if on]
        if not enabled:
            return "none"
        if len(enabled) == len(self.statuses) and len(enabled) > 1:
            return "all"
        return ";".join(str(i) for i in enabled)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    test_acc: float
    lr: float
    enabled_layer: str
    steps: int


@dataclass
class TrainingLog:
    records: List[EpochRecord] = field(default_factory=list)
    plans: List[EpochPlan] = field(default_factory=list)

    def append(self, record: EpochRecord, plan: EpochPlan) -> None:
        self.records.append(record)
        self.plans.append(plan)

    @property
    def total_steps(self) -> int:
        return sum(r.steps for r in self.records)

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for r in self.records:
                writer.writerow([r.epoch, f"{r.loss:.6f}", f"{r.test_acc:.2f}",
                                 f"{r.lr:.8g}", r.enabled_layer, r.steps])
        return path


def read_training_log(path: Union[str, Path]) -> List[EpochRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
            raise ConfigurationError(f"{path} is not a training log; header {reader.fieldnames}")
        return [
            EpochRecord(int(row["epoch"]), float(row["loss"]), float(row["test_acc"]),
                        float(row["lr"]), row["enabled_layer"], int(row["steps"]))
            for row in reader
        ]


@dataclass
class TrainResult:
    network: Network
    log: TrainingLog


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """``initial_lr`` halved every ``lr_halving_period`` epochs."""
    return config.initial_lr * 2.0 ** (-(epoch // config.lr_halving_period))


def select_epoch_layer(epoch: int, n_injection_layers: int, rng: np.random.Generator) -> int:
    """Uniform choice of the injection layer enabled in ``epoch``.

    Choices are i.i.d. across epochs; the epoch index does not enter the draw.
    """
    if n_injection_layers < 1:
        raise ConfigurationError("fat2 needs at least one injection layer")
    return int(rng.integers(n_injection_layers))


def plan_epoch(
    method: str, epoch: int, n_slots: int, rng: Optional[np.random.Generator] = None
) -> EpochPlan:
    if method == "sat":
        statuses = (False,) * n_slots
    elif method in ("fat1", "dropout2d-baseline"):
        statuses = (True,) * n_slots
    elif method == "fat2":
        chosen = select_epoch_layer(epoch, n_slots, rng)
        statuses = tuple(i == chosen for i in range(n_slots))
    else:
        raise ConfigurationError(f"Unknown training method '{method}'")
    return EpochPlan(epoch, statuses)


def build_for_config(config: TrainConfig, image_shape, num_classes: int) -> Network:
    """Fresh network for ``config``; weights come from the ``weights-init`` stream."""
    net = build_network(
        config.topology,
        image_shape,
        num_classes,
        weight_bits=config.weight_bits,
        act_bits=config.act_bits,
        slot=config.slot,
        p=config.p,
        fault_model=config.fault_model,
        rng=stream(config.seed, "weights-init"),
        fc_hidden=config.fc_hidden,
    )
    net.metadata.update(method=config.method, p=config.p, fault_model=config.fault_model,
                        dataset=config.dataset)
    return net


def _batches(n: int, batch_size: int, order: np.ndarray) -> Sequence[np.ndarray]:
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_epoch(
    net: Network,
    data: LabeledSet,
    optimizer: Adam,
    config: TrainConfig,
    epoch: int,
    shuffle_rng: np.random.Generator,
    injection_rng: np.random.Generator,
):
    """One pass over ``data``; returns the mean loss and the step count."""
    order = shuffle_rng.permutation(len(data))
    total, steps = 0.0, 0
    for step, idx in enumerate(_batches(len(data), config.batch_size, order)):
        net.zero_grad()
        logits = net.forward(data.images[idx], train=True, rng=injection_rng)
        loss, grad = squared_hinge_loss(logits, data.labels[idx])
        if not math.isfinite(loss):
            raise DivergenceError(epoch, step, loss)
        net.backward(grad)
        optimizer.step()
        net.clip_weights()
        total += loss
        steps += 1
    return total / max(steps, 1), steps


def train(
    config: TrainConfig,
    data: DatasetHandle,
    net: Optional[Network] = None,
    checkpoint_dir: Union[str, Path, None] = None,
    progress: bool = False,
    debug: bool = False,
    logger=None,
) -> TrainResult:
    """Train a network according to ``config``.

    Args:
        config: Method, hyper-parameters and seed.
        data: Dataset; ``train_subset_size`` takes the first samples of its train
            split and ``eval_subset_size`` a seeded sample of its test split.
        net: Optional pre-built network (its slot layers must match the method).
            A fresh one is built from the ``weights-init`` stream otherwise.
        checkpoint_dir: Where to write ``<run>_epoch<k>.qfat`` every
            ``checkpoint_every`` epochs and ``<run>.qfat`` at the end.
        progress: Show a tqdm progress bar over epochs.
        debug: Enable debug logging for this call.
        logger: Optional logger backend for debug output.

    Returns:
        TrainResult with the trained network (all slots disabled) and its log.

    Raises:
        DivergenceError: the loss became NaN or infinite.
    """
    with debug_session(debug, logger) as log:
        log.log_config("TRAIN", config.to_dict())
        if net is None:
            net = build_for_config(config, data.image_shape, data.num_classes)
        n_slots = len(net.injection_points)
        if config.method != "sat" and n_slots == 0:
            raise ConfigurationError(f"Method {config.method} needs slot layers in the network")

        train_set = data.train.subset(config.train_subset_size)
        eval_set = data.test.subset(config.eval_subset_size, stream(config.seed, "eval-subset"))
        shuffle_rng = stream(config.seed, "batch-shuffle")
        injection_rng = stream(config.seed, "injection-values")
        layer_rng = stream(config.seed, "fat2-layer-choice")
        optimizer = Adam(net.parameters(),
                         AdamHyper(lr=config.initial_lr, weight_decay=config.weight_decay))
        history = TrainingLog()
        log.log_step("DATA", f"{len(train_set)} train / {len(eval_set)} eval samples, "
                             f"{n_slots} injection points")

        for epoch in tqdm(range(config.epochs), desc=config.run_name, disable=not progress):
            plan = plan_epoch(config.method, epoch, n_slots, layer_rng)
            net.set_slot_status(plan.statuses)
            optimizer.lr = lr_schedule(epoch, config)
            loss, steps = train_epoch(net, train_set, optimizer, config, epoch,
                                      shuffle_rng, injection_rng)
            test_acc = accuracy(net, eval_set)
            record = EpochRecord(epoch, loss, test_acc, optimizer.lr, plan.enabled_label, steps)
            history.append(record, plan)
            log.log_epoch(epoch, loss, test_acc, optimizer.lr, plan.enabled_label)

            if checkpoint_dir and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                save_checkpoint(net, Path(checkpoint_dir) / f"{config.run_name}_epoch{epoch + 1}.qfat",
                                extra={"train_config": config.to_dict()})

        net.set_slot_status([False] * n_slots)
        if checkpoint_dir:
            path = save_checkpoint(net, Path(checkpoint_dir) / f"{config.run_name}.qfat",
                                   extra={"train_config": config.to_dict()})
            log.log_step("CHECKPOINT", str(path))
        return TrainResult(net, history)

"""Dataset ingestion for IDX (MNIST-style) and CIFAR-10 binary files.

Pixels are normalized to ``[-1, 1]`` and kept as float32 arrays shaped
``(n, channels, height, width)``; labels are int64.
"""

import gzip
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import ConfigurationError, DatasetFormatError

DATA_DIR_ENV = "QNN_FAT_DATA_DIR"

IDX_UBYTE = 0x08
IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
CIFAR_CLASSES = 10

FORMATS = ("idx", "cifar-binary")

_IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
_CIFAR_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
_CIFAR_TEST = ["test_batch.bin"]


@dataclass
class LabeledSet:
    """Images and labels of one split."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ConfigurationError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, size: Optional[int], rng: Optional[np.random.Generator] = None):
        """First ``size`` samples, or a seeded random sample when ``rng`` is given.

        The selected indices are kept in ascending order so sample order stays
        deterministic.
        """
        if size is None or size >= len(self):
            return self
        if rng is None:
            idx = np.arange(size)
        else:
            idx = np.sort(rng.choice(len(self), size=size, replace=False))
        return LabeledSet(self.images[idx], self.labels[idx])


@dataclass
class DatasetHandle:
    """An in-memory dataset with its train and test splits."""

    name: str
    train: LabeledSet
    test: LabeledSet
    num_classes: int
    normalization: Tuple[float, float] = (127.5, 127.5)
    source: str = field(default="")

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.train.images.shape[1:])

    @property
    def train_count(self) -> int:
        return len(self.train)

    @property
    def test_count(self) -> int:
        return len(self.test)


def normalize(pixels: np.ndarray) -> np.ndarray:
    """Map uint8 pixels onto ``[-1, 1]``."""
    return (pixels.astype(np.float32) / np.float32(127.5)) - np.float32(1.0)


def _read_bytes(path: Path) -> bytes:
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx(path: Union[str, Path], magic: Optional[int] = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared dims.

    When ``magic`` is given the leading 32-bit magic number must equal it
    (0x00000803 for image files, 0x00000801 for label files).
    """
    path = Path(path)
    data = _read_bytes(path)
    if len(data) < 4:
        raise DatasetFormatError(str(path), "file too short for an IDX magic number",
                                 expected=4, actual=len(data))
    if data[0] != 0 or data[1] != 0:
        raise DatasetFormatError(str(path), "bad IDX magic number", offset=0)
    if magic is not None and int.from_bytes(data[:4], "big") != magic:
        raise DatasetFormatError(
            str(path), f"IDX magic 0x{int.from_bytes(data[:4], 'big'):08x}, expected 0x{magic:08x}",
            offset=0,
        )
    if data[2] != IDX_UBYTE:
        raise DatasetFormatError(
            str(path), f"unsupported IDX element type 0x{data[2]:02x}", offset=2
        )
    ndim = data[3]
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise DatasetFormatError(str(path), "truncated IDX header",
                                 expected=header_len, actual=len(data))
    dims = tuple(int.from_bytes(data[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim))
    expected = header_len + int(np.prod(dims, dtype=np.int64))
    if len(data) != expected:
        raise DatasetFormatError(str(path), "IDX payload length mismatch",
                                 offset=min(len(data), expected), expected=expected,
                                 actual=len(data))
    return np.frombuffer(data, dtype=np.uint8, offset=header_len).reshape(dims)


def read_cifar_batch(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """Parse a CIFAR-10 binary batch of 3073-byte records."""
    path = Path(path)
    data = _read_bytes(path)
    if len(data) == 0 or len(data) % CIFAR_RECORD:
        records = len(data) // CIFAR_RECORD
        raise DatasetFormatError(
            str(path),
            "CIFAR-10 batch is not a whole number of 3073-byte records",
            offset=records * CIFAR_RECORD,
            expected=(records + 1) * CIFAR_RECORD,
            actual=len(data),
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = raw[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.size:
        raise DatasetFormatError(
            str(path), f"label {labels[bad[0]]} out of range", offset=int(bad[0]) * CIFAR_RECORD
        )
    images = raw[:, 1:].reshape((-1,) + CIFAR_SHAPE)
    return images, labels


def _find(directory: Path, name: str) -> Path:
    for candidate in (directory / name, directory / f"{name}.gz"):
        if candidate.exists():
            return candidate
    # MNIST mirrors sometimes use a dot before idx.
    dotted = directory / name.replace("-idx", ".idx")
    for candidate in (dotted, Path(f"{dotted}.gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"Dataset file '{name}' not found in {directory}")


def _load_idx_split(directory: Path, split: str) -> LabeledSet:
    image_name, label_name = _IDX_FILES[split]
    image_path = _find(directory, image_name)
    images = read_idx(image_path, IDX_MAGIC_IMAGES)
    labels = read_idx(_find(directory, label_name), IDX_MAGIC_LABELS).astype(np.int64)
    if images.ndim == 3:
        images = images[:, None, :, :]
    elif images.ndim != 4:
        raise DatasetFormatError(str(image_path), f"expected 3 or 4 IDX dims, got {images.ndim}")
    return LabeledSet(normalize(images), labels)


def _load_cifar_split(directory: Path, names) -> LabeledSet:
    # Any subset of the five training batches is accepted.
    present = [n for n in names if (directory / n).exists() or (directory / f"{n}.gz").exists()]
    if not present:
        raise FileNotFoundError(f"None of {names} found in {directory}")
    parts = [read_cifar_batch(_find(directory, name)) for name in present]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return LabeledSet(normalize(images), labels)


def default_data_dir() -> Optional[Path]:
    value = os.environ.get(DATA_DIR_ENV)
    return Path(value) if value else None


def load_dataset(
    path: Union[str, Path, None], fmt: str, name: Optional[str] = None
) -> DatasetHandle:
    """Load a dataset directory in one of the supported binary formats.

    Args:
        path: Directory holding the standard file names (``train-images-idx3-ubyte``
            and friends, or ``data_batch_*.bin`` / ``test_batch.bin``). When None,
            ``$QNN_FAT_DATA_DIR`` is used.
        fmt: ``"idx"`` or ``"cifar-binary"``.
        name: Dataset name recorded in reports; defaults to the directory name.

    Raises:
        ConfigurationError: unknown format or no path available.
        FileNotFoundError: a required file is missing.
        DatasetFormatError: a file does not match its format.
    """
    if fmt not in FORMATS:
        raise ConfigurationError(f"Unknown dataset format '{fmt}'; expected one of {FORMATS}")
    directory = Path(path).expanduser() if path is not None else default_data_dir()
    if directory is None:
        raise ConfigurationError(f"No dataset path given and ${DATA_DIR_ENV} is not set")
    if not directory.is_dir():
        raise FileNotFoundError(f"Dataset directory not found: {directory}")

    if fmt == "idx":
        train = _load_idx_split(directory, "train")
        test = _load_idx_split(directory, "test")
        num_classes = int(max(train.labels.max(initial=0), test.labels.max(initial=0))) + 1
    else:
        train = _load_cifar_split(directory, _CIFAR_TRAIN)
        test = _load_cifar_split(directory, _CIFAR_TEST)
        num_classes = CIFAR_CLASSES
    return DatasetHandle(
        name=name or directory.name,
        train=train,
        test=test,
        num_classes=num_classes,
        source=str(directory),
    )

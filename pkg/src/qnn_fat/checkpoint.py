"""Self-describing network checkpoints.

Layout::

    magic      4 bytes   b"QFAT"
    version    uint16    little-endian
    hdr_len    uint32    little-endian
    header     hdr_len bytes of UTF-8 JSON
    blobs      little-endian float32 arrays, back to back

The JSON header lists every layer with its spec, its codebooks and the
name, shape and byte offset of each tensor it owns (weights, batch-norm scale
and shift, running statistics). Loading rebuilds the network from the specs
and copies the blobs back, so a save/load round trip is bit-exact.
"""

import json
import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from .errors import CheckpointError
from .layers import LayerSpec
from .network import Network

MAGIC = b"QFAT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")
_DTYPE = np.dtype("<f4")


def _layer_tensors(layer) -> List[Tuple[str, np.ndarray]]:
    tensors = [(param.name, param.data) for param in layer.parameters()]
    tensors += sorted(layer.buffers().items())
    return tensors


def _layer_codebooks(layer) -> Dict:
    cb = getattr(layer, "codebook", None)
    return {} if cb is None else {"codebook": cb.to_dict()}


def save_checkpoint(net: Network, path: Union[str, Path], extra: Dict = None) -> Path:
    """Write ``net`` to ``path`` and return the path."""
    path = Path(path)
    blobs = []
    offset = 0
    layers = []
    for layer in net.layers:
        entries = []
        for name, data in _layer_tensors(layer):
            raw = np.ascontiguousarray(data, dtype=_DTYPE).tobytes()
            entries.append(
                {"name": name, "shape": list(data.shape), "offset": offset, "nbytes": len(raw)}
            )
            blobs.append(raw)
            offset += len(raw)
        layers.append({"spec": layer.spec.to_dict(), **_layer_codebooks(layer),
                       "tensors": entries})

    header = {
        "format_version": FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "num_classes": net.num_classes,
        "metadata": net.metadata,
        "extra": extra or {},
        "layers": layers,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for raw in blobs:
            fh.write(raw)
    return path


def read_checkpoint_header(path: Union[str, Path]) -> Tuple[Dict, bytes]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(str(path), f"file is {len(data)} bytes, shorter than the prefix")
    magic, version, header_len = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(str(path), f"bad magic {magic!r} at byte offset 0")
    if version != FORMAT_VERSION:
        raise CheckpointError(str(path), f"unsupported format version {version}")
    start = _PREFIX.size
    if len(data) < start + header_len:
        raise CheckpointError(str(path), "truncated header")
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(str(path), f"unreadable header: {exc}") from None
    return header, data[start + header_len :]


def load_checkpoint(path: Union[str, Path]) -> Tuple[Network, Dict]:
    """Rebuild a network from ``path``.

    Returns:
        Tuple of the network and the ``extra`` mapping stored with it.
    """
    header, blob = read_checkpoint_header(path)
    specs = [LayerSpec.from_dict(entry["spec"]) for entry in header["layers"]]
    net = Network(
        specs,
        tuple(header["input_shape"]),
        header["num_classes"],
        metadata=header.get("metadata", {}),
    )
    for layer, entry in zip(net.layers, header["layers"]):
        targets = dict(_layer_tensors(layer))
        for tensor in entry["tensors"]:
            end = tensor["offset"] + tensor["nbytes"]
            if end > len(blob):
                raise CheckpointError(
                    str(path), f"blob for '{tensor['name']}' ends at {end}, "
                    f"file has {len(blob)} blob bytes"
                )
            values = np.frombuffer(blob[tensor["offset"] : end], dtype=_DTYPE)
            target = targets[tensor["name"]]
            if values.size != target.size:
                raise CheckpointError(
                    str(path), f"'{tensor['name']}' has {values.size} values, "
                    f"expected {target.size}"
                )
            target[...] = values.reshape(tensor["shape"])
    return net, header.get("extra", {})

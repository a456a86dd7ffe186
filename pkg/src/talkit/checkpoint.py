"""Checkpoint file: JSON metadata plus one feature-format blob per tensor.

Layout::

    b"TKCK"              magic
    uint32 LE            format version (1)
    uint64 LE            length N of the JSON header
    N bytes              UTF-8 JSON: {"meta": {...}, "tensors": [index...]}
    blobs                one TKF1 feature file per tensor, in state_dict order

Each index entry is {"name", "shape", "offset", "nbytes"}; offsets count from
the first blob byte. A tensor of shape (a, b, ...) is stored as an
a x (b*...) matrix; 0-d and 1-d tensors as 1 x n.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from talkit.io import FormatError, decode_feature_matrix, encode_feature_matrix

MAGIC = b"TKCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def _as_matrix(arr: np.ndarray) -> np.ndarray:
    if arr.ndim <= 1:
        return arr.reshape(1, -1)
    return arr.reshape(arr.shape[0], -1)


def encode_checkpoint(state: dict, meta: dict) -> bytes:
    index, blobs, offset = [], [], 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().double().numpy()
        blob = encode_feature_matrix(_as_matrix(arr))
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)


def decode_checkpoint(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(buf) < _PREFIX.size:
        raise FormatError("checkpoint: truncated prefix")
    magic, version, n = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"checkpoint magic: expected {MAGIC!r}, got {magic!r}")
    if version != VERSION:
        raise FormatError(f"checkpoint version: expected {VERSION}, got {version}")
    start = _PREFIX.size + n
    if len(buf) < start:
        raise FormatError("checkpoint: truncated JSON header")
    header = json.loads(buf[_PREFIX.size : start].decode("utf-8"))
    tensors = {}
    for entry in header["tensors"]:
        lo = start + entry["offset"]
        blob = buf[lo : lo + entry["nbytes"]]
        if len(blob) != entry["nbytes"]:
            raise FormatError(f"checkpoint tensor {entry['name']!r}: truncated")
        tensors[entry["name"]] = decode_feature_matrix(blob).reshape(entry["shape"])
    return header["meta"], tensors


def save_checkpoint(path, model: torch.nn.Module, meta: dict) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(model.state_dict(), meta))
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode_checkpoint(Path(path).read_bytes())


def load_state_into(model: torch.nn.Module, tensors: dict[str, np.ndarray]) -> None:
    ref = model.state_dict()
    state = {k: torch.as_tensor(v, dtype=ref[k].dtype) for k, v in tensors.items()}
    model.load_state_dict(state)

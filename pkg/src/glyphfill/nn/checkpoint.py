"""Checkpoint file: named little-endian float32 arrays behind a JSON header.

Layout::

    b"GFCKPT01"                 8-byte magic
    uint64 (LE)                 header length N
    N bytes                     UTF-8 JSON header
    data                        concatenated float32 LE arrays

The header holds ``tensors``: ``{name: {shape, offset, trainable}}`` with offsets
relative to the start of the data section, plus free-form top-level metadata
(e.g. ``kind`` for adapter files).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from glyphfill.errors import CheckpointError

MAGIC = b"GFCKPT01"
_LE_F32 = np.dtype("<f4")


def _as_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    return np.ascontiguousarray(np.asarray(value, dtype=_LE_F32))


def save_checkpoint(path, tensors: dict, trainable=(), meta: dict | None = None) -> None:
    trainable = set(trainable)
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = _as_array(tensors[name])
        entries[name] = {"shape": list(arr.shape), "offset": offset, "trainable": name in trainable}
        blobs.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    header = dict(meta or {})
    header["tensors"] = entries
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for b in blobs:
            fh.write(b)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    if fh.read(8) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    size = fh.read(8)
    if len(size) != 8:
        raise CheckpointError(f"{path}: truncated header")
    (n,) = struct.unpack("<Q", size)
    try:
        header = json.loads(fh.read(n).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if not isinstance(header, dict) or "tensors" not in header:
        raise CheckpointError(f"{path}: header has no tensor table")
    return header


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        data = fh.read()
    arrays = {}
    for name, e in header["tensors"].items():
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = e["offset"]
        end = start + 4 * count
        if end > len(data):
            raise CheckpointError(f"{path}: tensor {name!r} runs past end of file")
        arrays[name] = np.frombuffer(data[start:end], dtype=_LE_F32).reshape(e["shape"]).copy()
    return arrays, header

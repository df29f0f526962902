"""Checkpoint files: a JSON header followed by a little-endian float64 blob.

Layout::

    b"ACECKPT1"                magic
    uint64 (little endian)     header length in bytes
    header                     UTF-8 JSON, sorted keys
    blob                       concatenated '<f8' tensors

The header carries caller metadata under ``"meta"`` and a tensor index
(name, shape, offset in float64 units) under ``"tensors"``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ace.errors import ValidationError

MAGIC = b"ACECKPT1"


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    index = []
    offset = 0
    chunks = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.tobytes())
    header = json.dumps({"meta": meta or {}, "tensors": index}, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if data[:8] != MAGIC:
        raise ValidationError("not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + hlen].decode())
    blob = np.frombuffer(data, dtype="<f8", offset=16 + hlen)
    tensors = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + n > blob.size:
            raise ValidationError(f"checkpoint truncated at tensor {entry['name']!r}")
        tensors[entry["name"]] = blob[start : start + n].astype(np.float64).reshape(entry["shape"])
    return tensors, header["meta"]


def atomic_write(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def save(path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    atomic_write(path, dumps(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())

"""Binary tensor container used for checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"SFSNIDCK"
    4 bytes   uint32 format version
    8 bytes   uint64 header length L
    L bytes   UTF-8 JSON header: {"meta": {...},
                                  "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    ...       raw row-major tensor bytes, offsets relative to the end of the header

The header is written with sorted keys and tensors in insertion order, so
identical contents always produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SFSNIDCK"
VERSION = 1


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        raw = arr.astype(dt, copy=False).tobytes(order="C")
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20 : 20 + hlen])
    base = 20 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        buf = data[start : start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise ValueError(f"{path}: truncated data for tensor {e['name']!r}")
        tensors[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return tensors, header["meta"]

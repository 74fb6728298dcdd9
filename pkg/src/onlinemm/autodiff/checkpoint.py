"""Flat binary checkpoint: magic, JSON header, then float64 payload."""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"OMMCKPT\x00"
VERSION = 1


def save_checkpoint(path, arrays: dict, meta: dict | None = None):
    entries, offset, blobs = [], 0, []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f8").copy(order="C")  # keeps 0-d shapes
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"version": VERSION, "arrays": entries, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Return ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + hlen])
    base = 20 + hlen
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=start).reshape(e["shape"]).copy()
    return arrays, header["meta"]

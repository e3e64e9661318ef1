"""Versioned binary checkpoint container ("APCK").

Layout: magic "APCK", u16 version, u32 JSON header length, JSON header,
then each array's raw bytes in header order. Arrays are stored C-order
with explicit little-endian dtypes, so a round trip is bit-exact and the
file bytes are a pure function of the contents (no timestamps).

Header JSON: {"arrays": [{"name", "dtype", "shape"}...], "meta": {...}}
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"APCK"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)  # note: would promote 0-d to 1-d
        dt = arr.dtype.newbyteorder("<")
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape)})
        blobs.append(arr.astype(dt, copy=False).tobytes())
    header = json.dumps({"arrays": entries, "meta": meta or {}},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([_HEAD.pack(MAGIC, VERSION, len(header)), header] + blobs)


def parse_checkpoint(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(data) < _HEAD.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, hlen = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(data[_HEAD.size:_HEAD.size + hlen].decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    offset = _HEAD.size + hlen
    for e in header["arrays"]:
        dt = np.dtype(e["dtype"])
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        nbytes = dt.itemsize * n
        if offset + nbytes > len(data):
            raise CheckpointError(f"truncated array {e['name']!r}")
        arr = np.frombuffer(data, dtype=dt, count=n, offset=offset).reshape(e["shape"])
        arrays[e["name"]] = arr.copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes")
    return arrays, header["meta"]


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(arrays, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return parse_checkpoint(Path(path).read_bytes())

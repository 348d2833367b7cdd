"""Named-tensor checkpoint container.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"INKCKPT1"
    bytes 8..15   uint64 length N of the JSON index
    bytes 16..    N bytes of UTF-8 JSON index
    remainder     concatenated tensor payloads, float64 little-endian, C order

The JSON index is ``{"meta": {...}, "tensors": [{"name", "shape", "offset",
"count"}, ...]}`` where ``offset`` is the byte offset into the payload region
and ``count`` the number of float64 values. Tensors are stored in sorted name
order so that identical parameters always produce identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"INKCKPT1"


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = []
    payload = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        raw = arr.tobytes()
        payload.append(raw)
        offset += len(raw)
    index = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(index)) + index + b"".join(payload)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(blob) < 16:
        raise CheckpointError("truncated checkpoint header")
    (n,) = struct.unpack("<Q", blob[8:16])
    if 16 + n > len(blob):
        raise CheckpointError("truncated checkpoint index")
    try:
        index = json.loads(blob[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint index: {e}") from None
    base = 16 + n
    out = {}
    for e in index["tensors"]:
        start = base + e["offset"]
        if start + 8 * e["count"] > len(blob):
            raise CheckpointError(f"truncated payload for tensor {e['name']!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=e["count"], offset=start)
        out[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return out, index["meta"]


def save(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())

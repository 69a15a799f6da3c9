"""Checkpoint container: JSON header followed by little-endian float32 arrays.

Layout::

    b"RFFICKP1" | u64 header length | header JSON (UTF-8) | array bytes ...

The header lists ``arrays`` as ``[{"name", "shape"}]`` in storage order;
everything else in it is free-form metadata.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RFFICKP1"


def dumps(header: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    head = dict(header)
    head["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    blob = json.dumps(head, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    for _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    if data[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    (n,) = struct.unpack_from("<Q", data, 8)
    header = json.loads(data[16 : 16 + n].decode())
    offset = 16 + n
    arrays = []
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        arrays.append((entry["name"], arr.astype(np.float32)))
        offset += 4 * count
    if offset != len(data):
        raise ValueError("checkpoint has trailing or missing bytes")
    return header, arrays


def save(path, header: dict, arrays) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(dumps(header, arrays))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())

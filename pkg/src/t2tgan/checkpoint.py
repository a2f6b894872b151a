"""Binary container for named float64 arrays.

Layout::

    T2TGAN-CKPT 1\\n
    <manifest byte length>\\n
    <JSON manifest: [{"name", "shape", "offset"}, ...]>
    <raw little-endian float64 payload>

Offsets are byte offsets into the payload. Writing the same arrays in the same
order always produces the same bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MAGIC = b"T2TGAN-CKPT 1\n"


class CheckpointError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        raw = a.tobytes()
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps(entries, separators=(",", ":")).encode()
    return MAGIC + f"{len(manifest)}\n".encode() + manifest + b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a T2TGAN checkpoint (bad magic)")
    pos = len(MAGIC)
    nl = blob.find(b"\n", pos)
    if nl < 0:
        raise CheckpointError("truncated checkpoint header")
    try:
        mlen = int(blob[pos:nl])
        entries = json.loads(blob[nl + 1 : nl + 1 + mlen])
    except ValueError as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from None
    payload = memoryview(blob)[nl + 1 + mlen :]
    out = {}
    for e in entries:
        shape = tuple(e["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = e["offset"]
        end = start + 8 * count
        if end > len(payload):
            raise CheckpointError(f"payload too short for {e['name']!r}")
        out[e["name"]] = np.frombuffer(payload[start:end], dtype="<f8").astype(np.float64).reshape(shape)
    return out


def save(path: str | os.PathLike, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(arrays))
    os.replace(tmp, path)
    return path


def load(path: str | os.PathLike) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())

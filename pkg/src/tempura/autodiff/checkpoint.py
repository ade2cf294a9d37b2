"""Binary parameter checkpoints.

Layout (all integers little-endian):

    magic        8 bytes   b"TMPRCKPT"
    version      u32       currently 1
    meta_len     u32       length of the UTF-8 JSON metadata block
    meta         bytes     JSON object (run config etc.), may be "{}"
    count        u32       number of parameter records
    record*      count times:
        name_len u32, name UTF-8 bytes
        ndim     u32, dims u64 * ndim
        payload  float64 little-endian, row-major, prod(dims) values

Values are written verbatim, so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TMPRCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None) -> None:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes,
              struct.pack("<I", len(params))]
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f8", order="C")
        encoded = name.encode()
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, meta_len = take("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    meta = json.loads(buf[pos:pos + meta_len].decode())
    pos += meta_len
    (count,) = take("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<I")
        name = buf[pos:pos + name_len].decode()
        pos += name_len
        (ndim,) = take("<I")
        dims = take(f"<{ndim}Q") if ndim else ()
        n = int(np.prod(dims)) if dims else 1
        end = pos + 8 * n
        if end > len(buf):
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        params[name] = np.frombuffer(buf[pos:end], dtype="<f8").reshape(dims).astype(np.float64)
        pos = end
    return params, meta

"""Binary checkpoint container.

Layout (little-endian):
    b"BSRK", u16 schema version, u32 header length, UTF-8 JSON header,
    u32 tensor count, then per tensor: u16 name length, name, u8 ndim,
    u32 dims..., float32 data.
The header carries the config snapshot and any resume metadata.
"""
from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np

MAGIC = b"BSRK"
SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray]
    header: Dict[str, Any] = field(default_factory=dict)


def dumps(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    header = json.dumps(ckpt.header, sort_keys=True).encode()
    buf.write(MAGIC + struct.pack("<HI", SCHEMA_VERSION, len(header)) + header)
    buf.write(struct.pack("<I", len(ckpt.tensors)))
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name], dtype="<f4", order="C")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def loads(data: bytes) -> Checkpoint:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("checkpoint is truncated")
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    version, hlen = struct.unpack("<HI", take(6))
    if version != SCHEMA_VERSION:
        raise CheckpointError(f"unsupported checkpoint schema {version}")
    header = json.loads(bytes(take(hlen)).decode())
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).copy()
    if pos != len(view):
        raise CheckpointError("trailing bytes after the last tensor")
    return Checkpoint(tensors, header)


def save(path, ckpt: Checkpoint):
    """Write atomically so an interrupted run never leaves a half-written file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(data)

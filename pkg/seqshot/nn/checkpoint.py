"""Checkpoint container.

Layout (little-endian): magic ``SQCK``, u32 version, model-kind tag
(u32 length + UTF-8), architecture JSON (u32 length + UTF-8), u32 tensor
count, then per tensor: name (u32 length + UTF-8), u32 rank, u32 dims,
f32 data. Tensors are written in parameter-name order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from seqshot.core.errors import (
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    UnknownModelKindError,
    UnknownTensorError,
)
from seqshot.core.utils import safe_write_bytes
from seqshot.nn.graph import Graph

MAGIC = b"SQCK"
VERSION = 1
MODEL_KINDS = ("weak", "strong", "detector", "delta", "generic")

_U32 = struct.Struct("<I")


def _string(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def encode_checkpoint(g: Graph) -> bytes:
    if g.kind not in MODEL_KINDS:
        raise UnknownModelKindError(f"cannot save model kind '{g.kind}'")
    arch = json.dumps(g.architecture(), sort_keys=True, separators=(",", ":"))
    out = [MAGIC, _U32.pack(VERSION), _string(g.kind), _string(arch), _U32.pack(len(g.params))]
    for name in sorted(g.params):
        arr = np.ascontiguousarray(g.params[name], dtype="<f4")
        out.append(_string(name))
        out.append(_U32.pack(arr.ndim))
        out.extend(_U32.pack(d) for d in arr.shape)
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.data)}")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def decode_checkpoint(data: bytes, expected_kind: Optional[str] = None) -> Graph:
    r = _Reader(data)
    if len(data) >= 4 and data[:4] != MAGIC:
        raise CheckpointFormatError(f"bad magic {data[:4]!r}")
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {VERSION}")
    kind = r.string()
    if kind not in MODEL_KINDS:
        raise UnknownModelKindError(f"unknown model kind '{kind}'")
    if expected_kind is not None and kind != expected_kind:
        raise UnknownModelKindError(f"expected a '{expected_kind}' checkpoint, found '{kind}'")
    arch = json.loads(r.string())
    g = Graph.from_architecture(arch, dtype=np.float32)
    shapes = g.param_shapes()
    params = {}
    for _ in range(r.u32()):
        name = r.string()
        dims = tuple(r.u32() for _ in range(r.u32()))
        n = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(dims).astype(np.float32)
        if name not in shapes:
            raise UnknownTensorError(f"unknown tensor '{name}'")
        if dims != shapes[name]:
            raise CheckpointFormatError(f"tensor '{name}' has shape {dims}, expected {shapes[name]}")
        params[name] = arr
    missing = sorted(set(shapes) - set(params))
    if missing:
        raise CheckpointFormatError(f"checkpoint is missing tensors: {', '.join(missing)}")
    g.params = params
    return g


def save_checkpoint(g: Graph, path: Path) -> None:
    safe_write_bytes(Path(path), encode_checkpoint(g))


def load_checkpoint(path: Path, expected_kind: Optional[str] = None) -> Graph:
    return decode_checkpoint(Path(path).read_bytes(), expected_kind=expected_kind)

"""Little-endian binary containers for logmels, pseudo-labels and embedding sequences.

Layouts (all integers u32 LE, all reals f32 LE, row-major):
  SQLM: magic, version, T, bands, T*bands reals
  SQPL: magic, version, windows, classes, packbits(windows*classes) bytes
  SQES: magic, version, T, dim, T*dim reals, label byte, provenance byte
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Tuple

import numpy as np

from seqshot.core.errors import CodecError
from seqshot.core.utils import safe_write_bytes

VERSION = 1
_HEADER = struct.Struct("<4sIII")


def _pack(magic: bytes, a: int, b: int, payload: bytes) -> bytes:
    return _HEADER.pack(magic, VERSION, a, b) + payload


def _unpack(data: bytes, magic: bytes) -> Tuple[int, int, bytes]:
    if len(data) < _HEADER.size:
        raise CodecError(f"truncated {magic.decode()} header")
    got, version, a, b = _HEADER.unpack_from(data)
    if got != magic:
        raise CodecError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise CodecError(f"unsupported {magic.decode()} version {version}")
    return a, b, data[_HEADER.size:]


def _reals(payload: bytes, a: int, b: int, what: str) -> np.ndarray:
    n = a * b * 4
    if len(payload) < n:
        raise CodecError(f"truncated {what} payload")
    return np.frombuffer(payload[:n], dtype="<f4").astype(np.float64).reshape(a, b)


def encode_logmel(frames: np.ndarray) -> bytes:
    f = np.ascontiguousarray(frames, dtype="<f4")
    return _pack(b"SQLM", f.shape[0], f.shape[1], f.tobytes())


def decode_logmel(data: bytes) -> np.ndarray:
    t, bands, payload = _unpack(data, b"SQLM")
    return _reals(payload, t, bands, "SQLM")


def encode_pseudo_labels(labels: np.ndarray) -> bytes:
    lab = np.asarray(labels, dtype=np.uint8)
    return _pack(b"SQPL", lab.shape[0], lab.shape[1], np.packbits(lab.ravel()).tobytes())


def decode_pseudo_labels(data: bytes) -> np.ndarray:
    windows, classes, payload = _unpack(data, b"SQPL")
    n = windows * classes
    if len(payload) * 8 < n:
        raise CodecError("truncated SQPL payload")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=n)
    return bits.reshape(windows, classes)


def encode_sequence(frames: np.ndarray, label: int, provenance: int) -> bytes:
    f = np.ascontiguousarray(frames, dtype="<f4")
    return _pack(b"SQES", f.shape[0], f.shape[1], f.tobytes() + bytes([label, provenance]))


def decode_sequence(data: bytes) -> Tuple[np.ndarray, int, int]:
    t, dim, payload = _unpack(data, b"SQES")
    frames = _reals(payload, t, dim, "SQES")
    tail = payload[t * dim * 4:]
    if len(tail) < 2:
        raise CodecError("truncated SQES trailer")
    return frames, tail[0], tail[1]


def write_logmel(path: Path, frames: np.ndarray) -> None:
    safe_write_bytes(Path(path), encode_logmel(frames))


def read_logmel(path: Path) -> np.ndarray:
    return decode_logmel(Path(path).read_bytes())


def write_pseudo_labels(path: Path, labels: np.ndarray) -> None:
    safe_write_bytes(Path(path), encode_pseudo_labels(labels))


def read_pseudo_labels(path: Path) -> np.ndarray:
    return decode_pseudo_labels(Path(path).read_bytes())

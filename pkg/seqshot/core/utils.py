from __future__ import annotations

import hashlib
import zlib
from pathlib import Path

import numpy as np


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open('rb') as f:
        for chunk in iter(lambda: f.read(1024 * 1024), b''):
            h.update(chunk)
    return h.hexdigest()


def safe_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding='utf-8', newline='\n')


def safe_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _key_to_int(key: object) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    # crc32: stable across processes
    return zlib.crc32(str(key).encode("utf-8"))


def derive_rng(seed: int, *keys: object) -> np.random.Generator:
    """Independent deterministic stream for (seed, key1, key2, ...).

    Keys may be ints or strings; the same keys always give the same stream.
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derive_seed(seed: int, *keys: object) -> int:
    return int(derive_rng(seed, *keys).integers(0, 2**31 - 1))

"""Shared helpers: deterministic PRNG streams, buffered noise, hashing, JSON I/O.

All randomness in the package flows from a single integer seed through named
Philox4x64-10 substreams (a counter-based 64-bit PRNG), so runs are reproducible
across processes and platforms of the same word size.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

PRNG_NAME = "philox4x64-10"

_MASK64 = (1 << 64) - 1


def _fold(parts: tuple[int, ...]) -> int:
    """FNV-1a fold of the substream path into a 64-bit word."""
    h = 0xCBF29CE484222325
    for p in parts:
        for byte in int(p).to_bytes(8, "little", signed=False):
            h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator for (seed, path). Same inputs -> same stream."""
    key = np.array([seed & _MASK64, _fold(path)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class GaussBuffer:
    """Buffered standard-normal draws for hot paths (one numpy call per block)."""

    __slots__ = ("_rng", "_buf", "_pos", "_size")

    def __init__(self, rng: np.random.Generator, size: int = 4096):
        self._rng = rng
        self._size = size
        self._buf = rng.standard_normal(size)
        self._pos = 0

    def next(self) -> float:
        if self._pos >= self._size:
            self._buf = self._rng.standard_normal(self._size)
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return float(v)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_json(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_json(path: str | Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path):
    with open(path) as fh:
        return json.load(fh)

"""Seeding helpers: numpy generators per replicate and counter-based Gaussian fields."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import _kernels

_MASK64 = (1 << 64) - 1


def as_generator(rng):
    """Accept a Generator, an int seed or ``None``."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def replicate_seeds(seed, count):
    """Independent child seed sequences, one per replicate."""
    return np.random.SeedSequence(seed).spawn(count)


def _stream_hash(label):
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _splitmix(x):
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class GaussianField:
    """Deterministic iid standard normals indexed by ``(layer, i, j)``.

    Values are generated on demand from a hash of the counters, so the full
    ``n x p`` auxiliary matrix never exists in memory.
    """

    seed: int
    stream_id: str = "Z"

    @property
    def key(self):
        return _splitmix(int(self.seed) & _MASK64) ^ _stream_hash(self.stream_id)

    def values(self, layer, rows, cols):
        return _kernels.gaussian_field(self.key, layer, rows, cols)

    def value(self, layer, i, j):
        return float(self.values(layer, [i], [j])[0])

    @classmethod
    def from_generator(cls, rng, stream_id="Z"):
        return cls(int(rng.integers(0, 2**63)), stream_id)

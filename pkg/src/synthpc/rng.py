"""Seed derivation.

Every random draw in the pipeline comes from a generator keyed by a master
seed plus a tuple of labels, so changing the parameters of one stage never
shifts the random stream seen by another.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *labels: object) -> int:
    """Hash ``seed`` and ``labels`` into a new unsigned 64-bit seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed) & MASK64).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, *labels: object) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *labels)))


def hash_uniform(seed: int, keys: np.ndarray) -> np.ndarray:
    """Order-independent uniforms in [0, 1) from integer keys (splitmix64)."""
    with np.errstate(over="ignore"):
        z = np.asarray(keys, dtype=np.uint64) + np.uint64(seed & MASK64)
        z = z * np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) / float(1 << 53)

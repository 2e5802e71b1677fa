"""Hierarchical seed derivation.

Every random stream in the package is drawn from ``numpy.random.PCG64``
seeded by :func:`derive_seed`.  A child seed is a pure function of the
master seed and a tuple of purpose keys, so any stream (a noise field for
one raster, the bootstrap of one tree, a fold assignment) can be
reproduced without replaying the others:

    child = SeedSequence(entropy=master, spawn_key=keys).generate_state(1, uint64)[0] & (2**63 - 1)

String keys are mapped to integers with CRC-32 of their UTF-8 encoding.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK63 = (1 << 63) - 1


def _key_to_int(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        if key < 0:
            raise ValueError(f"seed keys must be non-negative, got {key}")
        return int(key)
    raise TypeError(f"seed keys must be int or str, got {type(key).__name__}")


def derive_seed(master: int, *keys: int | str) -> int:
    """Return a 63-bit child seed for ``master`` and the given purpose keys."""
    if master < 0:
        raise ValueError("master seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(_key_to_int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0]) & _MASK63


def rng_for(master: int, *keys: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *keys)))


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))

"""Seeded random streams.

Every stochastic routine takes an integer seed and builds its generator here.
Named streams are derived with ``SeedSequence`` spawn keys on top of the
counter-based Philox bit generator, so two streams from the same root seed
never share state and adding draws to one never shifts the other.
"""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("batch", "noise", "init", "data", "model")


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Return the generator for stream ``name`` under root ``seed``.

    ``extra`` integers (cell index, repeat index, ...) extend the spawn key.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_key(name),) + tuple(int(e) for e in extra))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic child seed for ``path`` (a tuple of non-negative ints)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint32)[0])

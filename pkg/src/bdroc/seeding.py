"""Deterministic stream splitting for replication-parallel experiments."""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["substream"]


def substream(seed: int, *keys) -> np.random.Generator:
    """Generator derived from a root seed and a path of string/int keys.

    Counter-based: the same (seed, keys) always yields the same stream, and
    distinct key paths yield independent streams, independent of the order in
    which they are created.
    """
    spawn = tuple(k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=spawn)))

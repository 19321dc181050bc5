"""Seeded random streams.

All randomness in the package is drawn from PCG64 generators seeded through
``numpy.random.SeedSequence``. A stream is addressed by a name (init, dropout,
shuffle, cover, stego, bits, ...) plus optional integer indices, so every
consumer gets its own independent substream and adding a consumer never shifts
the draws of another. PCG64 and SeedSequence are platform independent, which
makes draws reproducible across machines.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


class RngState:
    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def stream(self, name: str, *index: int) -> np.random.Generator:
        """Fresh generator positioned at the start of substream ``name[index]``."""
        key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(i) for i in index)
        seq = np.random.SeedSequence(self.seed, spawn_key=key)
        return np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"RngState(seed={self.seed})"

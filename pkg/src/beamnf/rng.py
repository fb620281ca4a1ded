"""Reproducible, splittable random streams.

All stochastic code in the package draws from Philox counter-based
generators keyed by (seed, stream label).  Distinct labels give
statistically independent streams, so parallel workers can be seeded
deterministically without coordination.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _fold(parts) -> int:
    # FNV-style fold of the stream labels into one 64-bit word
    h = 0xCBF29CE484222325
    for part in parts:
        if isinstance(part, str):
            part = int.from_bytes(part.encode("utf8"), "little") & _MASK64
        h = ((h ^ (int(part) & _MASK64)) * 0x100000001B3) & _MASK64
    return h


def generator(seed: int, *stream) -> np.random.Generator:
    """Philox generator for the stream identified by (seed, *stream).

    Parameters
    ----------
    seed : int
        Experiment-level seed.
    *stream : int or str
        Labels identifying the substream (worker index, grid index, ...).
    """
    key = np.array([int(seed) & _MASK64, _fold(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

"""Seeded random streams.

Every stream is a PCG64 generator keyed by ``(seed, *stream_ids)`` through
``numpy.random.SeedSequence``, so a chain batch identified by
``(seed, batch_id)`` reproduces bit-for-bit on any platform running the same
numpy.  Normal variates use numpy's ziggurat method.
"""

from __future__ import annotations

import numpy as np

MAX_SEED = 2 ** 64 - 1


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *map(int, stream)])))


def as_rng(rng) -> np.random.Generator:
    """Accept a Generator, an int seed, or None (fresh entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return make_rng(rng)

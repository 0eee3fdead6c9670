"""SplitMix64 counter-based seeding.

The k-th output (k = 0, 1, ...) of a stream seeded with ``s`` is
``mix(s + (k + 1) * GAMMA)``, so any element is computable without touching
the ones before it.  Shot ``i`` of a batch uses seed ``stream(master)[i]``;
noise site ``j`` of that shot consumes ``stream(shot_seed)[j]``.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64(seed: int, k: int) -> int:
    """k-th output of the SplitMix64 stream seeded with ``seed``."""
    return mix64(seed + (k + 1) * GAMMA)


def shot_seeds(master_seed: int, start: int, count: int) -> np.ndarray:
    """Seeds of shots ``start .. start+count-1`` derived from ``master_seed``."""
    k = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(master_seed & MASK64) + k * np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def uniform_from_bits(z: int) -> float:
    """Top 53 bits of a 64-bit word as a float in [0, 1)."""
    return (z >> 11) * (1.0 / 9007199254740992.0)

"""SplitMix64 used as a counter-based stream.

Draw ``j`` of a stream seeded with ``s`` is ``splitmix64(s + j * GAMMA)``,
so any draw can be computed independently of the others.  Both kernel
backends use the same layout of draws.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
INV_2_53 = 1.0 / (1 << 53)


def splitmix64(x: int) -> int:
    z = (x + GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def derive_trial_seed(master: int, n_beacons: int, trial: int) -> int:
    return splitmix64(splitmix64(splitmix64(master & MASK64) ^ n_beacons) ^ trial)


def splitmix64_array(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=False)
    with np.errstate(over="ignore"):
        z = x + np.uint64(GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def derive_trial_seeds(master: int, n_beacons: int, trials: np.ndarray) -> np.ndarray:
    head = np.uint64(splitmix64(splitmix64(master & MASK64) ^ n_beacons))
    return splitmix64_array(head ^ np.asarray(trials, dtype=np.uint64))


def uniforms(seeds: np.ndarray, first: int, count: int) -> np.ndarray:
    """Draws ``first .. first+count-1`` for every seed, shape (len(seeds), count)."""
    j = np.arange(first, first + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        states = seeds[:, None] + j[None, :] * np.uint64(GAMMA)
    return (splitmix64_array(states) >> np.uint64(11)).astype(np.float64) * INV_2_53

"""
Counter-based uniforms: every value is a pure function of (seed, coordinates,
lane), so fields do not depend on the window they are evaluated on and can be
replayed site by site.
"""

import math
from typing import Iterable, Sequence

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

# Lanes
LANE_EMPTY = 0
LANE_ATOM = 1
LANE_BERNOULLI = 2
LANE_FAMILY = 3
LANE_REVEAL = 4


def splitmix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over='ignore'):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _as_u64(values) -> np.ndarray:
    signed = np.ascontiguousarray(np.atleast_1d(np.asarray(values, dtype=np.int64)))
    return signed.view(np.uint64)


def seed_array(seeds: Iterable[int]) -> np.ndarray:
    return np.array([int(s) & _MASK64 for s in seeds], dtype=np.uint64)


def mix_seed(seed: int, *indices: int) -> int:
    """Derive a child seed from a parent seed and integer indices."""
    h = splitmix64(seed_array([seed]))
    for i in indices:
        h = splitmix64(h ^ _as_u64(i))
    return int(h[0])


def replica_seeds(seed: int, start: int, stop: int) -> np.ndarray:
    """Seeds of replicas ``start..stop-1``; replica i gets ``mix_seed(seed, i)``."""
    base = splitmix64(seed_array([seed]))
    return splitmix64(base ^ _as_u64(np.arange(start, stop, dtype=np.int64)))


def hash_coords(seeds: np.ndarray, coords: np.ndarray, lane: int) -> np.ndarray:
    """
    Hash of every (seed, coordinate row) pair.

    Columns are absorbed last to first, so the time coordinate of a space-time
    site goes in before the spatial ones. Leading columns that are constant
    over ``coords`` are hashed once per seed.

    :param seeds: uint64 array of shape (B,)
    :param coords: integer array of shape (M, k)
    :return: uint64 array of shape (B, M)
    """
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords[:, None]
    with np.errstate(over='ignore'):
        h = splitmix64(np.asarray(seeds, dtype=np.uint64)[:, None] + np.uint64(lane) * _GOLDEN)
        for column in coords.T[::-1]:
            if h.shape[1] == 1 and len(column) and (column == column[0]).all():
                h = splitmix64(h ^ _as_u64(column[:1])[None, :])
            else:
                h = splitmix64(h ^ _as_u64(column)[None, :])
    return np.broadcast_to(h, (h.shape[0], coords.shape[0]))


def uniforms(seeds: np.ndarray, coords: np.ndarray, lane: int) -> np.ndarray:
    """Uniforms in [0, 1) with 53 random bits, shape (B, M)."""
    h = hash_coords(seeds, coords, lane)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def bernoulli(seeds: np.ndarray, coords: np.ndarray, lane: int, probability: float) -> np.ndarray:
    """``uniforms(...) < probability`` without forming the floats, shape (B, M)."""
    if probability >= 1:
        return np.ones((len(seeds), len(coords)), dtype=bool)
    cut = np.uint64(math.ceil(max(probability, 0.0) * (1 << 53)))
    return (hash_coords(seeds, coords, lane) >> np.uint64(11)) < cut


def uniform_at(seed: int, coord: Sequence[int], lane: int) -> float:
    return float(uniforms(seed_array([seed]), np.array([list(coord)], dtype=np.int64), lane)[0, 0])

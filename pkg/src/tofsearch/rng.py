"""Deterministic counter-based 64-bit hashing for seeds and noise.

All randomness in a run flows from a single master seed through keyed
splitmix64 mixing.  Python's built-in hash() is salted per process, so we
roll our own: results must be identical across processes and platforms
(the reference worker re-implements this scheme from the documented
constants and must match bit-for-bit).
"""

from __future__ import annotations

import math

MASK64 = 0xFFFFFFFFFFFFFFFF

# Fixed mixing key. Part of the wire/fixture contract: independent
# implementations must use the same value to reproduce feature points.
DEFAULT_HASH_KEY = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """One splitmix64 finalization round (Steele et al. output function)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def mix64(key: int, *parts: int) -> int:
    """Fold any number of integer parts into a 64-bit digest under `key`."""
    h = key & MASK64
    for p in parts:
        h = splitmix64(h ^ (p & MASK64))
    return h


def root_seed(master_seed: int, index: int) -> int:
    """Seed of root `index`. Depends only on (master_seed, index), so the
    seed set for N roots is a prefix of the set for N+1 roots."""
    return mix64(master_seed, 0x524F4F54, index)


def child_seed(parent_seed: int, ordinal: int, frame_index: int) -> int:
    """Seed of the `ordinal`-th child expanded at `frame_index`."""
    return mix64(parent_seed, ordinal, frame_index)


def unit_open(h: int) -> float:
    """Map a 64-bit hash to a float in the open interval (0, 1)."""
    return (h + 0.5) / 18446744073709551616.0  # 2**64


def gaussian_pair(key: int, counter: int) -> tuple[float, float]:
    """Two standard normals from (key, counter) via Box-Muller.

    The exact sequence of float operations is part of the reproducibility
    contract; do not reorder.
    """
    u1 = unit_open(mix64(key, 2 * counter))
    u2 = unit_open(mix64(key, 2 * counter + 1))
    r = math.sqrt(-2.0 * math.log(u1))
    theta = 2.0 * math.pi * u2
    return r * math.cos(theta), r * math.sin(theta)


def unit_vector(key: int, dimension: int) -> tuple[float, ...]:
    """Deterministic point on the unit sphere in R^dimension.

    Gaussian components (Box-Muller over counter-derived uniforms),
    normalized in index order.
    """
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    zs: list[float] = []
    for i in range((dimension + 1) // 2):
        a, b = gaussian_pair(key, i)
        zs.append(a)
        zs.append(b)
    zs = zs[:dimension]
    norm = math.sqrt(sum(z * z for z in zs))
    if norm < 1e-300:  # astronomically unlikely; keep deterministic anyway
        return tuple([1.0] + [0.0] * (dimension - 1))
    return tuple(z / norm for z in zs)

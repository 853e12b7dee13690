"""Counter-based deterministic random numbers.

Every random draw in this package (rate-coding spikes, dataset shuffles,
synthetic pixels, weight init) is a pure function of (seed, counter) built
on the splitmix64 finalizer. Because a draw is addressed rather than pulled
from mutable generator state, results never depend on call order, chunk
boundaries, or how many workers split the work.

Substreams for different purposes are keyed through ``derive``, which folds
integer tags into a fresh 64-bit seed. The tag constants below keep the
purposes from colliding.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

# substream tags (arbitrary distinct constants)
TAG_SPLIT = 0x53504C49
TAG_INIT = 0x494E4954
TAG_SHUFFLE = 0x53485546
TAG_ENCODE = 0x454E434F
TAG_EVAL = 0x4556414C
TAG_DATA = 0x44415441
TAG_SNR = 0x534E5250


def mix64(z: int) -> int:
    """splitmix64 finalizer on one 64-bit integer (pure Python, exact)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return (z ^ (z >> 31)) & MASK64


def raw_at(seed: int, counter: int) -> int:
    """counter-th raw 64-bit output of the stream keyed by seed."""
    return mix64((seed + (counter + 1) * GOLDEN) & MASK64)


def uniform_scalar(seed: int, counter: int) -> float:
    """One uniform double in [0, 1) at the given counter."""
    return (raw_at(seed, counter) >> 11) * 2.0**-53


def uniform_at(seed: int, counters: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) doubles addressed by an array of integer counters.

    Vectorized twin of ``uniform_scalar``; the two agree bit for bit.
    """
    z = np.asarray(counters).astype(np.uint64)
    z = (z + np.uint64(1)) * np.uint64(GOLDEN) + np.uint64(seed & MASK64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53


def uniform_block(seed: int, start: int, count: int) -> np.ndarray:
    """count uniforms at consecutive counters start .. start+count-1."""
    return uniform_at(seed, np.arange(start, start + count, dtype=np.uint64))


def derive(seed: int, *parts: int) -> int:
    """Key an independent substream from a seed and integer tags.

    Order-sensitive: derive(s, a, b) != derive(s, b, a) in general.
    """
    z = seed & MASK64
    for p in parts:
        z = mix64((z + GOLDEN) ^ (p & MASK64))
    return z


def permutation(n: int, seed: int) -> np.ndarray:
    """Deterministic Fisher-Yates shuffle of range(n).

    Walks i = n-1 .. 1, swapping i with j = floor(u_i * (i + 1)) where
    u_i = uniform_scalar(seed, i). Fully specified so splits reproduce
    across platforms.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    idx = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = int(uniform_scalar(seed, i) * (i + 1))
        idx[i], idx[j] = idx[j], idx[i]
    return idx

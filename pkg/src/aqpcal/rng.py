"""Portable counter-based random numbers built on splitmix64.

Every random decision in this package is derived from a 64-bit seed through
the splitmix64 finalizer, used in counter mode:

    value k of the stream seeded by s  =  mix64(s + (k + 1) * GAMMA)   (mod 2**64)

which is exactly the output sequence of the classic splitmix64 generator
started at state s.  Child seeds are derived, never shared:

    derive(s, tag)  =  mix64(s ^ mix64((tag + 1) * GAMMA))

Uniform doubles come from the top 53 bits: (v >> 11) * 2**-53, giving values
in [0, 1).  All of this is plain integer arithmetic plus one exact float
multiply, so the jit and numpy kernel backends reproduce identical streams
bit for bit.

This module holds the scalar (python int) implementation used for seed trees
and small draws; the kernel backends carry their own array versions.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_TO_UNIT = 2.0 ** -53


def mix64(z: int) -> int:
    """splitmix64 finalizer: a 64-bit bijection with full avalanche."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def stream_value(seed: int, k: int) -> int:
    """k-th raw 64-bit output of the stream seeded by ``seed`` (k >= 0)."""
    return mix64((seed + (k + 1) * GAMMA) & MASK64)


def uniform(seed: int, k: int) -> float:
    """k-th uniform double in [0, 1) of the stream seeded by ``seed``."""
    return (stream_value(seed, k) >> 11) * _TO_UNIT


def derive(seed: int, *tags: int) -> int:
    """Derive an independent child seed from integer tags.

    Tags are folded left to right, so derive(s, a, b) == derive(derive(s, a), b).
    """
    h = seed & MASK64
    for t in tags:
        h = mix64(h ^ mix64(((t + 1) * GAMMA) & MASK64))
    return h


def uniform_array(seed: int, n: int, start: int = 0) -> np.ndarray:
    """Vectorized stream values start..start+n-1 as uniform doubles in [0, 1)."""
    ks = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    z = np.uint64(seed) + ks * np.uint64(GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * _TO_UNIT


def permutation(seed: int, n: int) -> np.ndarray:
    """Seeded permutation of 0..n-1 (stable argsort of stream keys)."""
    ks = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(seed) + ks * np.uint64(GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    z = z ^ (z >> np.uint64(31))
    return np.argsort(z, kind="stable")


def check_seed(value: int) -> int:
    """Validate a user-facing seed: any integer representable as uint64."""
    if not isinstance(value, (int, np.integer)):
        raise ValueError(f"seed must be an integer, got {type(value).__name__}")
    v = int(value)
    if v < 0 or v > MASK64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return v

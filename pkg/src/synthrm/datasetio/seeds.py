"""Splittable 64-bit seed derivation.

``child_seed(parent, i) = splitmix64(splitmix64(parent) + i)`` (mod 2**64), so
every (scene, view, transmitter) work unit owns an independent seed that
does not depend on scheduling order.
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def child_seed(parent: int, index: int) -> int:
    if index < 0:
        raise ValueError("index must be non-negative")
    return splitmix64((splitmix64(parent) + int(index)) & MASK64)

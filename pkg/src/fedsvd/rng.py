"""Portable pseudo-random stream used for every random matrix in the package.

The generator is xoshiro256** seeded through splitmix64, so a given seed yields
the same bits on any platform or language. Gaussian deviates come from the
Box-Muller transform, consuming two uniforms per *pair* of deviates:

    u1 = 1 - next_double()        # in (0, 1]
    u2 = next_double()            # in [0, 1)
    z0 = sqrt(-2 ln u1) * cos(2 pi u2)
    z1 = sqrt(-2 ln u1) * sin(2 pi u2)

``next_double`` takes the top 53 bits of a 64-bit output. Matrices are filled
row-major with z0, z1, z0, z1, ...; when the entry count is odd the final z1 is
discarded.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** 1.0."""

    def __init__(self, seed: int = 0, *, state: tuple[int, int, int, int] | None = None):
        if state is not None:
            self.s = [int(v) & _MASK for v in state]
        else:
            sm = int(seed) & _MASK
            words = []
            for _ in range(4):
                sm, out = splitmix64(sm)
                words.append(out)
            self.s = words
        if not any(self.s):
            raise ValueError("xoshiro256 state must not be all zero")

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_double(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def standard_normal(self, count: int) -> list[float]:
        out: list[float] = []
        while len(out) < count:
            u1 = 1.0 - self.next_double()
            u2 = self.next_double()
            radius = math.sqrt(-2.0 * math.log(u1))
            angle = 2.0 * math.pi * u2
            out.append(radius * math.cos(angle))
            out.append(radius * math.sin(angle))
        return out[:count]


def gaussian_matrix(rows: int, cols: int, seed: int) -> np.ndarray:
    """Row-major standard-normal matrix drawn from a fresh stream for ``seed``."""
    return gaussian_matrix_from(Xoshiro256(seed), rows, cols)


def gaussian_matrix_from(gen: Xoshiro256, rows: int, cols: int) -> np.ndarray:
    values = gen.standard_normal(rows * cols)
    return np.asarray(values, dtype=np.float64).reshape(rows, cols)

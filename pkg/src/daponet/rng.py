"""Counter-based splitmix64 generator.

The stream is fully specified so weight files can be reproduced bit-for-bit
in any language:

    state_0 = seed mod 2**64
    for the i-th draw (i = 1, 2, ...):
        z = state_0 + i * 0x9E3779B97F4A7C15            (mod 2**64)
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9          (mod 2**64)
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB          (mod 2**64)
        u64 = z ^ (z >> 31)
    float in [0, 1):  (u64 >> 11) * 2**-53

This is exactly the sequential splitmix64 stream, evaluated from the counter
so that large draws vectorize.
"""
from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


class Rng:
    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _MASK
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        i = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = np.uint64(self.seed) + i * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))

    def random(self, n: int) -> np.ndarray:
        """``n`` float64 values uniform on [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        shape = tuple(shape) if not isinstance(shape, int) else (shape,)
        n = int(np.prod(shape)) if shape else 1
        return (low + (high - low) * self.random(n)).reshape(shape)

    def normal(self, shape) -> np.ndarray:
        """Box-Muller normals, two uniforms per value."""
        shape = tuple(shape) if not isinstance(shape, int) else (shape,)
        n = int(np.prod(shape)) if shape else 1
        u = self.random(2 * n)
        u1, u2 = 1.0 - u[:n], u[n:]
        return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2 * np.pi * u2)).reshape(shape)


def splitmix64_reference(seed: int, n: int) -> list[int]:
    """Scalar splitmix64, used to pin the vectorized stream."""
    state = seed & _MASK
    out = []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & _MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        out.append(z ^ (z >> 31))
    return out

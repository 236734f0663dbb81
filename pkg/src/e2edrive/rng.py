"""SplitMix64 generator and the normal sampler built on it.

The generator is bit-exact with the reference recurrence so that scenario
datasets and weight initialisations can be reproduced in any language.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4B7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic in numpy wraps modulo 2**64, matching the scalar path.
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """64-bit SplitMix generator.

    ``next()`` advances the state by the golden gamma and returns the mixed
    value; ``uniform()`` maps the top 53 bits to ``[0, 1)``.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix(self.state)

    def uniform(self) -> float:
        return (self.next() >> 11) * _INV_2_53

    def next_array(self, n: int) -> np.ndarray:
        """Return the next ``n`` raw outputs as uint64, advancing the state."""
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            out = _mix_array(z)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return out

    def uniform_array(self, n: int) -> np.ndarray:
        return (self.next_array(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normal_array(self, n: int, std: float = 1.0) -> np.ndarray:
        """Box-Muller normals, one per consecutive pair of uniforms.

        For pair ``(u1, u2)`` the sample is
        ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``; ``1 - u1`` keeps the log finite.
        """
        u = self.uniform_array(2 * n).reshape(n, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        return std * r * np.cos(2.0 * math.pi * u[:, 1])

    def randbelow(self, n: int) -> int:
        return min(n - 1, int(self.uniform() * n))

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle (from the back) returning a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.randbelow(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


def derive_seed(seed: int) -> int:
    """First SplitMix64 output for ``seed``; used to spread dataset seeds apart."""
    return SplitMix64(seed).next()

"""64-bit linear congruential generator shared by every seeded component.

The stream is defined by ``state <- state * 6364136223846793005 + 1442695040888963407
(mod 2**64)``; each draw advances the state once and maps the top 53 bits of the
new state to a double in ``[0, 1)``.
"""

from __future__ import annotations

import numpy as np

MULTIPLIER = 6364136223846793005
INCREMENT = 1442695040888963407
_MASK = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


class Rng:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state * MULTIPLIER + INCREMENT) & _MASK
        return self.state

    def uniform(self) -> float:
        """One draw in [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError(f"randint needs n >= 1, got {n}")
        return min(int(self.uniform() * n), n - 1)

    def uniform_array(self, n: int) -> np.ndarray:
        """``n`` consecutive draws as a float64 array.

        Equivalent to calling :meth:`uniform` ``n`` times; the states are
        computed in closed form with wrapping uint64 arithmetic.
        """
        if n == 0:
            return np.zeros(0, dtype=np.float64)
        with np.errstate(over="ignore"):
            mults = np.full(n, MULTIPLIER, dtype=np.uint64)
            powers = np.cumprod(mults, dtype=np.uint64)  # a^1 .. a^n
            geo = np.empty(n, dtype=np.uint64)  # sum_{j<k} a^j for k = 1..n
            geo[0] = 1
            if n > 1:
                geo[1:] = np.cumsum(powers[:-1], dtype=np.uint64) + np.uint64(1)
            states = powers * np.uint64(self.state) + np.uint64(INCREMENT) * geo
        self.state = int(states[-1])
        return (states >> np.uint64(11)).astype(np.float64) * _INV_2_53

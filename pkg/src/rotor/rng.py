"""Deterministic 64-bit PRNG used for weight init and segment shuffling.

The generator is xorshift64* (Marsaglia xorshift with a multiplicative
finalizer). All constants are fixed here and are part of the on-disk
reproducibility contract:

    state ^= state >> 12
    state ^= (state << 25) & 2^64-1
    state ^= state >> 27
    output = (state * 0x2545F4914F6CDD1D) mod 2^64

Seeding runs the raw seed through one round of SplitMix64
(gamma 0x9E3779B97F4A7C15, finalizer constants 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB) so that small seeds, including 0, produce well-mixed
nonzero states. A zero state after seeding is replaced by the SplitMix64
gamma itself.

Derived values:
  * uniforms: top 53 bits, ``(x >> 11) * 2^-53`` in [0, 1)
  * normals: Box-Muller, ``sqrt(-2 ln u1) * cos(2 pi u2)`` with
    ``u1 = ((x >> 11) + 1) * 2^-53`` in (0, 1]; one normal per uniform pair
  * bounded ints: rejection sampling on the top of the 64-bit range
  * shuffles: Fisher-Yates, iterating i from n-1 down to 1 with
    ``j = randbelow(i + 1)``
"""

import math

_MASK64 = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_TWO53 = float(1 << 53)


def _splitmix64(x: int) -> int:
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Xorshift64Star:
    """xorshift64* stream; every draw mutates the 64-bit state."""

    def __init__(self, seed: int):
        state = _splitmix64(seed & _MASK64)
        self._state = state if state != 0 else _SPLITMIX_GAMMA

    def next_u64(self) -> int:
        s = self._state
        s ^= s >> 12
        s ^= (s << 25) & _MASK64
        s ^= s >> 27
        self._state = s
        return (s * _MULT) & _MASK64

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) / _TWO53

    def normal(self, mean: float = 0.0, stdev: float = 1.0) -> float:
        """One Box-Muller normal; consumes exactly two uniforms."""
        u1 = ((self.next_u64() >> 11) + 1) / _TWO53
        u2 = (self.next_u64() >> 11) / _TWO53
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mean + stdev * z

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        bound = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < bound:
                return x % n

    def shuffled(self, items: list) -> list:
        """Fisher-Yates shuffle of a copy of ``items``."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.randbelow(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

"""Deterministic 64-bit PRNG used for scene generation.

SplitMix64 (Steele/Lea/Flood finalizer) with the usual published constants.
Pure integer arithmetic, so streams are identical on every platform and
Python build; numpy generators are seeded from it where bulk sampling is
needed.
"""

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * _MIX1 & _MASK64
    z = (z ^ (z >> 27)) * _MIX2 & _MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """Sequential SplitMix64 stream."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        return _mix(self._state)

    def next_double(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_index(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return int(self.next_u64() % n)


def derive_seed(seed: int, *indices: int) -> int:
    """Deterministic sub-seed from a root seed and index path."""
    z = seed & _MASK64
    for i in indices:
        z = _mix((z + (i + 1) * _GAMMA) & _MASK64)
    return z

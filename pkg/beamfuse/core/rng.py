# Portable pseudo-random numbers for dataset generation.
#
# Dataset bytes must not depend on the platform or the numpy version, so the
# simulator draws everything from this pinned generator: SplitMix64 seeds a
# xoshiro256++ state, Gaussians come from Box-Muller with the second value
# of each pair cached, consumed in call order.

import math
from typing import List, MutableSequence

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# Stream tags keep scene, trajectory and sensor draws independent.
STREAM_SCENE = 1
STREAM_TRAJECTORY = 2
STREAM_SENSORS = 3
STREAM_SPLIT = 4
STREAM_LIDAR_RESAMPLE = 5


def splitmix64(state: int):
    """Advance a SplitMix64 state; returns (new_state, output)."""
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def stream_seed(seed: int, stream: int) -> int:
    return (seed ^ ((stream * GOLDEN_GAMMA) & MASK64)) & MASK64


class Xoshiro256pp:
    """xoshiro256++ generator seeded through SplitMix64."""

    def __init__(self, seed: int):
        state = seed & MASK64
        words: List[int] = []
        for _ in range(4):
            state, value = splitmix64(state)
            words.append(value)
        self._s = words
        self._spare = None

    @classmethod
    def for_stream(cls, seed: int, stream: int) -> "Xoshiro256pp":
        return cls(stream_seed(seed, stream))

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def integer(self, n: int) -> int:
        """Integer in [0, n) by multiply-shift."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def normal(self, mean: float = 0.0, sigma: float = 1.0) -> float:
        if self._spare is not None:
            z = self._spare
            self._spare = None
            return mean + sigma * z
        u1 = 1.0 - self.random()
        u2 = self.random()
        radius = math.sqrt(-2.0 * math.log(u1))
        angle = 2.0 * math.pi * u2
        self._spare = radius * math.sin(angle)
        return mean + sigma * radius * math.cos(angle)

    def normals(self, count: int, sigma: float = 1.0) -> np.ndarray:
        return np.array([self.normal(0.0, sigma) for _ in range(count)], dtype=np.float64)

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integer(i + 1)
            items[i], items[j] = items[j], items[i]

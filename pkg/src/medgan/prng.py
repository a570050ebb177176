"""Seeded, platform-independent random numbers.

The generator is SplitMix64: a 64-bit counter advanced by the golden-ratio
increment ``0x9E3779B97F4A7C15`` and passed through a fixed mixing function.
Because each output depends only on the counter value, a block of ``k``
draws is computed in one vectorized step and produces exactly the same
values as ``k`` sequential draws.

Draw conventions (part of the reproducibility contract):

* ``next_u64``: state += GAMMA (mod 2**64); return mix(state).
* ``uniform``: ``(u64 >> 11) * 2**-53``, a float64 in [0, 1).
* ``normal``: Box-Muller on consecutive pairs ``(u1, u2)``. Pair ``k``
  yields element ``2k`` = ``r cos(2 pi u2)`` and element ``2k+1`` =
  ``r sin(2 pi u2)`` with ``r = sqrt(-2 ln(1 - u1))``. An odd request
  still consumes a whole pair; the sine half is discarded.
* ``derive_seed(seed, key)`` = mix(mix(seed) ^ (key + GAMMA)), used for
  per-sample and per-network seeds.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1

_G = np.uint64(GAMMA)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, key: int) -> int:
    return mix64(mix64(seed) ^ ((key + GAMMA) & _MASK))


class Prng:
    """SplitMix64 generator with explicit, copyable state."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self.state = self.seed

    def copy(self) -> "Prng":
        other = Prng(self.seed)
        other.state = self.state
        return other

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & _MASK
        return mix64(self.state)

    def u64(self, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError(f"count must be non-negative, got {count}")
        steps = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _G
            out = _mix_array(z)
        self.state = (self.state + count * GAMMA) & _MASK
        return out

    def uniform(self, count: int) -> np.ndarray:
        return (self.u64(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_range(self, low: float, high: float, count: int) -> np.ndarray:
        return low + (high - low) * self.uniform(count)

    def integer_below(self, bound: int) -> int:
        # Lemire-free modulo reduction; bias is < 2**-40 for the bounds used here.
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        return self.next_u64() % bound

    def normal(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:count]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``, swapping from the top index down."""
        order = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integer_below(i + 1)
            order[i], order[j] = order[j], order[i]
        return order


def sample_normal(prng: Prng, mean: float, stddev: float, shape, dtype=np.float32) -> np.ndarray:
    """Draw a tensor of normal samples in row-major order."""
    if stddev < 0:
        raise ValueError(f"stddev must be >= 0, got {stddev}")
    shape = tuple(int(s) for s in shape)
    count = int(np.prod(shape, dtype=np.int64))
    z = prng.normal(count)
    return (mean + stddev * z).reshape(shape).astype(dtype)

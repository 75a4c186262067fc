"""Deterministic pseudo-random streams used by every component.

The generator is splitmix64: a counter-based 64-bit generator whose k-th
output is ``mix64(state0 + (k+1) * GAMMA)`` with the standard finalizer.
Because each draw depends only on the stream origin and the draw index,
bulk generation vectorizes and any (seed, purpose, index) substream can be
reconstructed independently, which keeps datasets and weight
initializations byte-reproducible across runs and languages.

Gaussians come from Box-Muller applied to consecutive uniform pairs; a
request for an odd number of normals discards the trailing half-pair.
"""

from __future__ import annotations

import math

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class Stream:
    """A single splitmix64 stream positioned at draw index 0."""

    def __init__(self, state0: int):
        self._state0 = state0 & _MASK
        self._index = 0

    def raw(self, count: int) -> np.ndarray:
        """Next `count` raw 64-bit outputs as a uint64 array."""
        if count < 0:
            raise ValueError("count must be non-negative")
        ks = np.arange(self._index + 1, self._index + 1 + count, dtype=np.uint64)
        self._index += count
        states = np.uint64(self._state0) + ks * np.uint64(GAMMA)
        return _mix64_array(states)

    def uniforms(self, count: int) -> np.ndarray:
        """Next `count` doubles uniform on [0, 1), 53-bit resolution."""
        return (self.raw(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normals(self, count: int) -> np.ndarray:
        """Next `count` standard normals via Box-Muller pairs."""
        pairs = (count + 1) // 2
        u = self.uniforms(2 * pairs)
        # 1 - u lies in (0, 1] so the log is finite
        r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
        theta = 2.0 * math.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:count]

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n); index j = draw mod (i+1)."""
        perm = np.arange(n)
        if n > 1:
            draws = self.raw(n - 1)
            for pos, i in enumerate(range(n - 1, 0, -1)):
                j = int(draws[pos] % np.uint64(i + 1))
                perm[i], perm[j] = perm[j], perm[i]
        return perm


def stream(seed: int, *path: int) -> Stream:
    """Derive an independent stream from a root seed and integer path keys.

    The origin is chained through the finalizer, so streams for distinct
    (purpose, index) paths are decorrelated while remaining a pure
    function of their arguments.
    """
    state = mix64(seed)
    for key in path:
        state = mix64(state ^ mix64((key & _MASK) * GAMMA + 1))
    return Stream(state)


# fixed purpose keys for the substreams of a run
COEFFS = 1
NOISE = 2
INIT = 3
SHUFFLE = 4

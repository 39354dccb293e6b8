"""Counter-based random numbers for reproducible rendering.

Every sample is a pure hash of (seed, pixel, sample, bounce, dimension), so
results are bit-identical regardless of evaluation order or thread count.
The four counters are packed into one 64-bit key (24 | 16 | 8 | 16 bits)
and run through two rounds of the splitmix64 finalizer.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MAX_PIXELS = 1 << 24
MAX_SAMPLES = 1 << 16
MAX_BOUNCES = 1 << 8
MAX_DIMS = 1 << 16

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def counter_rand(seed, pixel, sample, bounce, dim):
    """Uniform float64 in [0, 1) for one (pixel, sample, bounce, dim) slot."""
    key = (
        (np.uint64(pixel) << np.uint64(40))
        | (np.uint64(sample) << np.uint64(24))
        | (np.uint64(bounce) << np.uint64(16))
        | np.uint64(dim)
    )
    h = _mix64(np.uint64(seed) + _GOLDEN)
    h = _mix64(h ^ key)
    return (h >> np.uint64(11)) * (1.0 / 9007199254740992.0)


def rand_grid(seed: int, pixels, samples, bounce: int = 0, dim: int = 0) -> np.ndarray:
    """Vectorized convenience wrapper over :func:`counter_rand` (tests, demos)."""
    px = np.asarray(pixels, dtype=np.int64)
    sm = np.asarray(samples, dtype=np.int64)
    px, sm = np.broadcast_arrays(px, sm)
    out = np.empty(px.shape, dtype=np.float64)
    flat_p, flat_s, flat_o = px.ravel(), sm.ravel(), out.ravel()
    for i in range(flat_p.size):
        flat_o[i] = counter_rand(seed, flat_p[i], flat_s[i], bounce, dim)
    return out

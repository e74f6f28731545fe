"""Counter-based deterministic RNG.

Every random value in the pipeline is a pure function of
(seed, stream key, draw index), where the stream key is the 4-tuple
(image id, pixel x, pixel y, sample index).  Non-pixel consumers (pose
samplers, dataset planning) reuse the same key slots with purpose tags.
This makes results independent of tile order, worker count, and
scheduling, and identical across platforms (only 64-bit integer ops).
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15  # golden-ratio increment (splitmix64)
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U = np.uint64


def _mix(x: int) -> int:
    """splitmix64 finalizer on a python int (mod 2^64)."""
    x &= _MASK
    x ^= x >> 30
    x = (x * _M1) & _MASK
    x ^= x >> 27
    x = (x * _M2) & _MASK
    x ^= x >> 31
    return x


def stream_key(seed: int, a: int = 0, b: int = 0, c: int = 0, d: int = 0) -> int:
    """Collapse (seed, image id, pixel x, pixel y, sample index) into one 64-bit state."""
    h = _mix(seed & _MASK)
    for field in (a, b, c, d):
        h = _mix((h ^ (field & _MASK)) + _GAMMA)
    return h


def _u01_from_bits(bits: int) -> float:
    # top 53 bits -> double in [0, 1)
    return (bits >> 11) * (1.0 / (1 << 53))


class Rng:
    """One deterministic value stream.

    Same (seed, key) always replays the same sequence; `fork` derives an
    independent child stream without consuming draws from the parent.
    """

    __slots__ = ("seed", "key", "_state", "_counter")

    def __init__(self, seed: int, key: tuple[int, int, int, int] = (0, 0, 0, 0)):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._state = stream_key(self.seed, *self.key)
        self._counter = 0

    def fork(self, a: int = 0, b: int = 0, c: int = 0, d: int = 0) -> "Rng":
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child.key = (a, b, c, d)
        child._state = stream_key(self._state, a, b, c, d)
        child._counter = 0
        return child

    def next(self) -> float:
        """Uniform draw in [0, 1)."""
        bits = _mix(self._state + self._counter * _GAMMA)
        self._counter += 1
        return _u01_from_bits(bits)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next()

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return min(int(self.next() * n), n - 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]


def hash_streams(seed: int, a, b, c, d) -> np.ndarray:
    """Vectorized stream_key over numpy integer arrays (all uint64 math)."""
    def vmix(x):
        x = x.astype(np.uint64, copy=True)
        x ^= x >> _U(30)
        x *= _U(_M1)
        x ^= x >> _U(27)
        x *= _U(_M2)
        x ^= x >> _U(31)
        return x

    h = np.broadcast_to(_U(_mix(seed & _MASK)), np.broadcast_shapes(
        np.shape(a), np.shape(b), np.shape(c), np.shape(d))).copy()
    for field in (a, b, c, d):
        f = np.asarray(field).astype(np.uint64)
        h = vmix((h ^ f) + _U(_GAMMA))
    return h


def uniform_from_state(state: np.ndarray, counter) -> np.ndarray:
    """Vectorized [0,1) draw number `counter` from per-element stream states."""
    c = np.asarray(counter).astype(np.uint64)
    x = state + c * _U(_GAMMA)
    x = x ^ (x >> _U(30))
    x = x * _U(_M1)
    x = x ^ (x >> _U(27))
    x = x * _U(_M2)
    x = x ^ (x >> _U(31))
    return (x >> _U(11)).astype(np.float64) * (1.0 / (1 << 53))


def rng_next(rng: Rng) -> float:
    """Free-function form of Rng.next for callers that prefer it."""
    return rng.next()

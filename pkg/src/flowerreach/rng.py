"""Counter-based random streams.

Every random number is a pure function of ``(seed, step, sample, index)``,
so rollouts can be evaluated in any order (or in parallel) and still see
exactly the same noise. The hash is SplitMix64's finaliser ``mix``::

    key(seed, step, k) = mix(mix(mix(seed) ^ step) ^ k)
    bits(key, i)       = mix(key + i * 0x9E3779B97F4A7C15)

Normals come in pairs from the Marsaglia polar method: ``bits(key, c)`` is
split into two 32-bit halves mapped to ``(h + 0.5) / 2**31 - 1``; draws
outside the unit disc are rejected and the counter ``c`` moves on. A stream
is therefore read sequentially, pair by pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, uint64

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_31 = 1.0 / 2147483648.0

# Stream tags used by the simulator to keep child streams disjoint.
TAG_PERCEPTION = 0x50455243


@njit(cache=True, error_model="numpy", inline="always")
def _mix(z):
    z = z + uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(cache=True, error_model="numpy")
def stream_key(seed, step, k):
    """64-bit key for sample ``k`` of control step ``step``."""
    h = _mix(uint64(seed))
    h = _mix(h ^ uint64(step))
    return _mix(h ^ uint64(k))


@njit(cache=True, error_model="numpy", inline="always")
def polar_pair(key, c):
    """Next two normals of stream ``key`` starting at counter ``c``.

    Returns ``(n0, n1, c_next)``; ``c_next`` is past any rejected draws.
    """
    key = uint64(key)
    c = uint64(c)
    while True:
        bits = _mix(key + c * uint64(0x9E3779B97F4A7C15))
        c += uint64(1)
        a = (float(bits >> uint64(32)) + 0.5) * 4.656612873077393e-10 - 1.0
        b = (float(bits & uint64(0xFFFFFFFF)) + 0.5) * 4.656612873077393e-10 - 1.0
        s = a * a + b * b
        if s < 1.0:
            f = math.sqrt(-2.0 * math.log(s) / s)
            return a * f, b * f, c


def fill_normals(key, out: np.ndarray) -> None:
    """Write the first ``len(out)`` normals of stream ``key`` into ``out``."""
    _fill_normals(np.uint64(int(key) & _MASK), out)


@njit(cache=True, error_model="numpy")
def _fill_normals(key, out):
    n = out.shape[0]
    c = uint64(0)
    for i in range(0, n, 2):
        a, b, c = polar_pair(key, c)
        out[i] = a
        if i + 1 < n:
            out[i + 1] = b


# Pure-Python twin of the jitted hash; used to cross-check the kernels.
def _py_mix(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def py_stream_key(seed: int, step: int, k: int) -> int:
    h = _py_mix(seed & _MASK)
    h = _py_mix(h ^ (step & _MASK))
    return _py_mix(h ^ (k & _MASK))


def py_normals(key: int, n: int) -> list[float]:
    out: list[float] = []
    c = 0
    while len(out) < n:
        bits = _py_mix((key + c * _GOLDEN) & _MASK)
        c += 1
        a = ((bits >> 32) + 0.5) * _INV_2_31 - 1.0
        b = ((bits & 0xFFFFFFFF) + 0.5) * _INV_2_31 - 1.0
        s = a * a + b * b
        if s < 1.0:
            f = math.sqrt(-2.0 * math.log(s) / s)
            out.extend((a * f, b * f))
    return out[:n]


@dataclass(frozen=True)
class StreamKey:
    """Identifies the random stream of one controller invocation."""

    seed: int
    step: int

    def normals(self, k: int, n: int) -> np.ndarray:
        out = np.empty(n)
        fill_normals(stream_key(self.seed, self.step, k), out)
        return out


def child_generator(seed: int, tag: int) -> np.random.Generator:
    """Sequential numpy generator for a named child stream of ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed & _MASK, tag]))

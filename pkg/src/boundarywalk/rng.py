"""Counter-based random streams.

Each path (or ladder epoch, or replicate) owns a 64-bit key derived from the
master seed and its index; draw ``i`` of that stream is ``mix64(key + (i+1)*G)``
with the SplitMix64 finaliser. Nothing is sequential across paths, so any
partition of the work over threads produces identical numbers.

The scalar functions are numba kernels; the ``*_np`` twins operate on uint64
arrays for the lockstep numpy fallback.
"""

from __future__ import annotations

import numpy as np

from ._accel import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_GAMMA = np.uint64(0xD1B54A32D192ED03)
_SEED_SALT = np.uint64(0x5851F42D4C957F2D)
_AUX_SALT = np.uint64(0xA0761D6478BD642F)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0
TWO_PI = 2.0 * np.pi


@njit
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit
def stream_key(seed, index):
    """Key of substream ``index`` under master ``seed`` (both uint64)."""
    return mix64(mix64(seed ^ _SEED_SALT) + (np.uint64(index) + _ONE) * _STREAM_GAMMA)


@njit
def aux_key(key):
    """An independent companion stream for the same path."""
    return mix64(key ^ _AUX_SALT)


@njit
def uniform(key, i):
    """Draw ``i`` of stream ``key`` as a double in the open interval (0, 1)."""
    z = mix64(key + (np.uint64(i) + _ONE) * GOLDEN)
    return (float(z >> _S11) + 0.5) * _INV53


@njit
def normal_pair(key, j):
    """Box-Muller pair built from draws ``2j`` and ``2j+1``."""
    u1 = uniform(key, 2 * j)
    u2 = uniform(key, 2 * j + 1)
    r = np.sqrt(-2.0 * np.log(u1))
    a = TWO_PI * u2
    return r * np.cos(a), r * np.sin(a)


@njit
def normal_at(key, i):
    z0, z1 = normal_pair(key, i >> 1)
    if i & 1:
        return z1
    return z0


# numpy twins ---------------------------------------------------------------


def mix64_np(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_keys(seed: int, start: int, count: int) -> np.ndarray:
    """Keys for substreams ``start .. start+count-1``."""
    idx = np.arange(start, start + count, dtype=np.uint64)
    base = mix64_np(np.array([np.uint64(seed) ^ _SEED_SALT], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        return mix64_np(base + (idx + _ONE) * _STREAM_GAMMA)


def aux_key_np(keys: np.ndarray) -> np.ndarray:
    return mix64_np(keys ^ _AUX_SALT)


def uniform_np(keys: np.ndarray, i) -> np.ndarray:
    """Draw ``i`` (scalar or array broadcast against ``keys``)."""
    i = np.asarray(i, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = mix64_np(keys + (i + _ONE) * GOLDEN)
    return ((z >> _S11).astype(np.float64) + 0.5) * _INV53


def normal_np(keys: np.ndarray, i) -> np.ndarray:
    i = np.asarray(i, dtype=np.int64)
    j = i >> 1
    u1 = uniform_np(keys, 2 * j)
    u2 = uniform_np(keys, 2 * j + 1)
    r = np.sqrt(-2.0 * np.log(u1))
    a = TWO_PI * u2
    return np.where(i & 1, r * np.sin(a), r * np.cos(a))


def seed_to_uint(seed: int) -> np.uint64:
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must lie in [0, 2**64), got {seed}")
    return np.uint64(seed)

"""Counter-based random numbers (Philox4x64-10).

Every draw is a pure function of ``(seed, stream, block)``, where ``stream``
packs the sample and motion index and ``block`` counts 4-word blocks.  The
numba kernel and numpy's own ``Philox`` bit generator produce the same words,
so the two backends consume identical randomness.
"""
from __future__ import annotations

import numpy as np

from ._accel import njit

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)

MOTION_BITS = 8
MAX_MOTIONS = 1 << MOTION_BITS


def stream_key(sample: int, motion: int) -> int:
    if not 0 <= motion < MAX_MOTIONS:
        raise ValueError("motion index out of range")
    return (int(sample) << MOTION_BITS) | int(motion)


@njit
def _mulhilo(a, b):
    a_lo = a & _MASK32
    a_hi = a >> _S32
    b_lo = b & _MASK32
    b_hi = b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _MASK32) + (hl & _MASK32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    lo = a * b
    return hi, lo


@njit
def philox_block(c0, k0, k1, out):
    """Fill ``out[:4]`` with the block for counter ``(c0, 0, 0, 0)`` and key ``(k0, k1)``."""
    x0 = c0
    x1 = np.uint64(0)
    x2 = np.uint64(0)
    x3 = np.uint64(0)
    for _ in range(10):
        hi0, lo0 = _mulhilo(_M0, x0)
        hi1, lo1 = _mulhilo(_M1, x2)
        y0 = hi1 ^ x1 ^ k0
        y2 = hi0 ^ x3 ^ k1
        x0 = y0
        x1 = lo1
        x2 = y2
        x3 = lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    out[0] = x0
    out[1] = x1
    out[2] = x2
    out[3] = x3


@njit
def to_unit(word):
    """Uniform double in ``(0, 1]`` from the top 53 bits."""
    return ((word >> _S11) + np.uint64(1)) * (1.0 / 9007199254740992.0)


def raw_words(seed: int, stream: int, n_blocks: int) -> np.ndarray:
    """Words for blocks ``1..n_blocks`` using numpy's Philox (reference path)."""
    bg = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    return bg.random_raw(4 * n_blocks).astype(np.uint64)


def unit_from_words(words: np.ndarray) -> np.ndarray:
    return ((words >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * (1.0 / 9007199254740992.0)

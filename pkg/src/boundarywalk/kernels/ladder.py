"""Ladder-epoch kernels: ``T_x = inf{k >= 1: x + S_k >= 0}`` and ladder renewals.

Mean-zero ladder epochs have infinite mean, and most of a long epoch is
spent far below zero. For normal increments the walk therefore advances in
blocks: at depth ``s < 0`` it takes ``m = floor((s / SKIP)**2)`` steps at once
as ``sqrt(m) Z``. By Levy's inequality the chance that the skipped steps
contain an up-crossing is at most ``2 P(Z > SKIP)``, about ``1e-15`` for
``SKIP = 8``, so the epoch and height laws are unchanged at double precision.
Block ``k .. k+m-1`` consumes normal draw ``k`` only.
"""

from __future__ import annotations

import math

import numpy as np

from .. import rng
from .._accel import njit, pick
from ..model import increment, increments_np

SKIP = 8.0


@njit
def _draw(code, dparams, key, akey, k, pj, z0, z1):
    # pair-cached normal draw k, or increment k for other laws
    if code == 0:
        j = k >> 1
        if j != pj:
            z0, z1 = rng.normal_pair(key, j)
            pj = j
        x = z1 if (k & 1) else z0
        return x, pj, z0, z1
    return increment(code, dparams, key, akey, k), pj, z0, z1


@njit
def _advance(code, dparams, key, akey, k, s, room, block, pj, z0, z1):
    """One step, or one block of steps when deep below zero; returns (s, k, pj, z0, z1)."""
    m = 1
    if block and code == 0 and s < -2.0 * SKIP:
        r = -s / SKIP
        m = int(r * r)
        if m > room:
            m = room
        if m < 1:
            m = 1
    x, pj, z0, z1 = _draw(code, dparams, key, akey, k, pj, z0, z1)
    if m > 1:
        x *= math.sqrt(m)
    return s + x, k + m, pj, z0, z1


@njit
def _ladder_nb(keys, x0, cap, code, dparams, block, epoch, height):
    for p in range(keys.shape[0]):
        key = keys[p]
        akey = rng.aux_key(key)
        s = x0[p]
        k = 0
        pj = -1
        z0 = 0.0
        z1 = 0.0
        epoch[p] = -1
        height[p] = np.nan
        while k < cap:
            s, k, pj, z0, z1 = _advance(code, dparams, key, akey, k, s, cap - k, block, pj, z0, z1)
            if s >= 0.0:
                epoch[p] = k
                height[p] = s
                break


def _block_sizes(code, s, room, block):
    if not (block and code == 0):
        return np.ones(s.shape, dtype=np.int64)
    r = -s / SKIP
    m = np.where(s < -2.0 * SKIP, (r * r).astype(np.int64), 1)
    return np.clip(np.minimum(m, room), 1, None).astype(np.int64)


def _ladder_np(keys, x0, cap, code, dparams, block, epoch, height):
    s = x0.astype(float).copy()
    k = np.zeros(keys.shape[0], dtype=np.int64)
    epoch[:] = -1
    height[:] = np.nan
    active = np.arange(keys.shape[0])
    while active.size:
        m = _block_sizes(code, s[active], cap - k[active], block)
        x = increments_np(code, dparams, keys[active], k[active])
        s[active] += np.where(m > 1, x * np.sqrt(m), x)
        k[active] += m
        up = s[active] >= 0.0
        done = active[up]
        epoch[done] = k[done]
        height[done] = s[done]
        active = active[~up]
        active = active[k[active] < cap]


def ladder_batch(keys, x0, cap, code, dparams, block=True, backend=None):
    """First nonnegative level of ``x0 + S_k``; ``epoch = -1`` marks a capped walk."""
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), keys.shape).copy()
    epoch = np.empty(keys.shape[0], dtype=np.int64)
    height = np.empty(keys.shape[0])
    pick(_ladder_nb, _ladder_np, backend)(keys, x0, int(cap), code, dparams, bool(block), epoch, height)
    return epoch, height


@njit
def _renewal_nb(keys, lo, hi, cap, code, dparams, block, counts, capped, epochs):
    # V_0 = 0 then V_j += (ladder height); one stream per replicate, counter
    # carries on across consecutive ladder epochs
    for p in range(keys.shape[0]):
        key = keys[p]
        akey = rng.aux_key(key)
        v = 0.0
        c = 1 if lo <= 0.0 < hi else 0
        k = 0
        pj = -1
        z0 = 0.0
        z1 = 0.0
        s = 0.0
        start = 0
        e = 1
        capped[p] = False
        while v < hi:
            s, k, pj, z0, z1 = _advance(code, dparams, key, akey, k, s, start + cap - k, block, pj, z0, z1)
            if s >= 0.0:
                v += s
                if lo <= v < hi:
                    c += 1
                s = 0.0
                start = k
                if v < hi:
                    e += 1
            elif k - start >= cap:
                capped[p] = True
                break
        counts[p] = c
        epochs[p] = e


def _renewal_np(keys, lo, hi, cap, code, dparams, block, counts, capped, epochs):
    P = keys.shape[0]
    v = np.zeros(P)
    s = np.zeros(P)
    k = np.zeros(P, dtype=np.int64)
    start = np.zeros(P, dtype=np.int64)
    counts[:] = 1 if lo <= 0.0 < hi else 0
    capped[:] = False
    epochs[:] = 1
    active = np.arange(P)
    while active.size:
        m = _block_sizes(code, s[active], start[active] + cap - k[active], block)
        x = increments_np(code, dparams, keys[active], k[active])
        s[active] += np.where(m > 1, x * np.sqrt(m), x)
        k[active] += m
        up = s[active] >= 0.0
        idx = active[up]
        v[idx] += s[idx]
        counts[idx] += (lo <= v[idx]) & (v[idx] < hi)
        s[idx] = 0.0
        start[idx] = k[idx]
        epochs[idx] += v[idx] < hi
        over = (~up) & (k[active] - start[active] >= cap)
        capped[active[over]] = True
        active = active[(v[active] < hi) & ~over]


def renewal_batch(keys, lo, hi, cap, code, dparams, block=True, backend=None):
    """Renewal points ``V_j`` (including ``V_0 = 0``) in ``[lo, hi)`` per replicate.

    Returns ``(counts, capped, epochs)`` where ``epochs`` is the number of
    ladder epochs started (the last one is the capped one when ``capped``).
    """
    counts = np.empty(keys.shape[0], dtype=np.int64)
    capped = np.empty(keys.shape[0], dtype=np.bool_)
    epochs = np.empty(keys.shape[0], dtype=np.int64)
    pick(_renewal_nb, _renewal_np, backend)(keys, float(lo), float(hi), int(cap), code, dparams,
                                            bool(block), counts, capped, epochs)
    return counts, capped, epochs

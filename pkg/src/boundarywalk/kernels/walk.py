"""Crossing kernels for the scaled walk and the Brownian oracle.

The walk stops at the first ``k`` with ``S_k >= b_k``. The continuous-time
definition through the piecewise-linear interpolant reduces exactly to this
grid rule, so no sub-step crossing check is needed.
"""

from __future__ import annotations

import math

import numpy as np

from .. import rng
from .._accel import njit, pick
from ..model import increment, increments_np


@njit
def _next_increment(code, dparams, key, akey, k, spare):
    # normals come in Box-Muller pairs: even k computes both, odd k reuses
    if code == 0:
        if (k & 1) == 0:
            z0, z1 = rng.normal_pair(key, k >> 1)
            return z0, z1
        return spare, spare
    return increment(code, dparams, key, akey, k), spare


@njit
def _walk_one(key, akey, levels, code, dparams):
    # one loop per law keeps the per-step dispatch out of the hot path
    cap = levels.shape[0] - 1
    s = 0.0
    k = 0
    if code == 0:
        while True:
            if s >= levels[k]:
                return k, s
            if k == cap:
                return -1, s
            z0, z1 = rng.normal_pair(key, k >> 1)
            s += z0
            k += 1
            if s >= levels[k]:
                return k, s
            if k == cap:
                return -1, s
            s += z1
            k += 1
    if code == 1:
        while s < levels[k]:
            if k == cap:
                return -1, s
            s += -np.log(rng.uniform(key, k)) - 1.0
            k += 1
        return k, s
    while s < levels[k]:
        if k == cap:
            return -1, s
        s += increment(code, dparams, key, akey, k)
        k += 1
    return k, s


@njit
def _crossing_nb(keys, levels, code, dparams, stop, s_out):
    for p in range(keys.shape[0]):
        key = keys[p]
        stop[p], s_out[p] = _walk_one(key, rng.aux_key(key), levels, code, dparams)


def _crossing_np(keys, levels, code, dparams, stop, s_out):
    cap = levels.shape[0] - 1
    s = np.zeros(keys.shape[0])
    stop[:] = -1
    active = np.arange(keys.shape[0])
    k = 0
    while active.size:
        done = s[active] >= levels[k]
        stop[active[done]] = k
        active = active[~done]
        if not active.size or k == cap:
            break
        s[active] += increments_np(code, dparams, keys[active], k)
        k += 1
    s_out[:] = s


def crossing_batch(keys, levels, code, dparams, backend=None):
    """Stop index (``-1`` when the cap is hit) and ``S`` at the stop, per path."""
    stop = np.empty(keys.shape[0], dtype=np.int64)
    s_out = np.empty(keys.shape[0])
    pick(_crossing_nb, _crossing_np, backend)(keys, levels, code, dparams, stop, s_out)
    return stop, s_out


# diagnostics ----------------------------------------------------------------


@njit
def _diagnostics_nb(keys, levels, code, dparams, d_values, b_lo, b_hi, alpha,
                    stop, s_out, n_d, growth, m_b):
    cap = levels.shape[0] - 1
    nd = d_values.shape[0]
    nb = b_lo.shape[0]
    for p in range(keys.shape[0]):
        key = keys[p]
        akey = rng.aux_key(key)
        s = 0.0
        k = 0
        spare = 0.0
        stop[p] = -1
        g = 0.0
        while True:
            gap = levels[k] - s
            if gap <= 0.0:
                stop[p] = k
                break
            g += 1.0 / (1.0 + gap * gap)
            for i in range(nd):
                if gap < d_values[i]:
                    n_d[p, i] += 1
            if k == cap:
                break
            x, spare = _next_increment(code, dparams, key, akey, k, spare)
            s += x
            k += 1
        s_out[p] = s
        growth[p] = g
        if stop[p] < 0 or nb == 0:
            continue
        # second pass over the same stream for the alpha-truncated visit counts
        kmax = int(math.floor(alpha * stop[p]))
        s = 0.0
        spare = 0.0
        for k in range(kmax + 1):
            gap = levels[k] - s
            for i in range(nb):
                if b_lo[i] <= gap < b_hi[i]:
                    m_b[p, i] += 1
            x, spare = _next_increment(code, dparams, key, akey, k, spare)
            s += x


def _diagnostics_np(keys, levels, code, dparams, d_values, b_lo, b_hi, alpha,
                    stop, s_out, n_d, growth, m_b):
    cap = levels.shape[0] - 1
    s = np.zeros(keys.shape[0])
    stop[:] = -1
    active = np.arange(keys.shape[0])
    k = 0
    while active.size:
        gap = levels[k] - s[active]
        done = gap <= 0.0
        stop[active[done]] = k
        active = active[~done]
        gap = gap[~done]
        growth[active] += 1.0 / (1.0 + gap * gap)
        n_d[active] += gap[:, None] < d_values[None, :]
        if not active.size or k == cap:
            break
        s[active] += increments_np(code, dparams, keys[active], k)
        k += 1
    s_out[:] = s
    if b_lo.shape[0] == 0:
        return
    kmax = np.where(stop >= 0, np.floor(alpha * np.maximum(stop, 0)).astype(np.int64), -1)
    s = np.zeros(keys.shape[0])
    active = np.flatnonzero(kmax >= 0)
    k = 0
    while active.size:
        gap = levels[k] - s[active]
        m_b[active] += (b_lo[None, :] <= gap[:, None]) & (gap[:, None] < b_hi[None, :])
        s[active] += increments_np(code, dparams, keys[active], k)
        k += 1
        active = active[kmax[active] >= k]


def diagnostics_batch(keys, levels, code, dparams, d_values, b_lo, b_hi, alpha, backend=None):
    """Crossing plus near-boundary counters ``N_d``, the growth sum and ``M_B(alpha)``."""
    p = keys.shape[0]
    stop = np.empty(p, dtype=np.int64)
    s_out = np.empty(p)
    n_d = np.zeros((p, d_values.shape[0]), dtype=np.int64)
    growth = np.zeros(p)
    m_b = np.zeros((p, b_lo.shape[0]), dtype=np.int64)
    pick(_diagnostics_nb, _diagnostics_np, backend)(
        keys, levels, code, dparams, d_values, b_lo, b_hi, alpha, stop, s_out, n_d, growth, m_b
    )
    return stop, s_out, n_d, growth, m_b


# Brownian oracle ------------------------------------------------------------


@njit
def _ig_passage(a, c, h, key, i):
    """Time change of a Brownian bridge's hitting time of zero.

    The bridge from ``a > 0`` to ``c`` over ``[0, h]`` hits zero at
    ``h r / (h + r)`` where ``r`` is the passage time of ``a + B(r) + (c/h) r``
    to zero, conditioned on occurring: inverse Gaussian with mean ``a h/|c|``
    and shape ``a**2`` (Levy when ``c == 0``).
    """
    z = rng.normal_at(key, 2 * i)
    u = rng.uniform(rng.aux_key(key), i)
    lam = a * a
    if abs(c) <= 1e-14 * a:
        return lam / (z * z)
    m = a * h / abs(c)
    q = m * z * z / (2.0 * lam)
    root = math.sqrt(q * q + 2.0 * q)
    x = m / (1.0 + q + root)
    if u <= m / (m + x):
        return x
    return m * (1.0 + q + root)


@njit
def _field_bilinear(q, dtf, hf, t, y):
    nt = q.shape[0]
    ny = q.shape[1]
    ft = t / dtf
    if ft < 0.0:
        ft = 0.0
    if ft > nt - 1:
        ft = float(nt - 1)
    fy = y / hf
    if fy < 0.0:
        fy = 0.0
    if fy > ny - 1:
        fy = float(ny - 1)
    i = min(int(ft), nt - 2)
    j = min(int(fy), ny - 2)
    at = ft - i
    ay = fy - j
    return ((1 - at) * ((1 - ay) * q[i, j] + ay * q[i, j + 1])
            + at * ((1 - ay) * q[i + 1, j] + ay * q[i + 1, j + 1]))


@njit
def _brownian_nb(keys, bnodes, dt, horizon, q, dtf, hf, use_q, tau_out, integ_out):
    cap = bnodes.shape[0] - 1
    sdt = math.sqrt(dt)
    for p in range(keys.shape[0]):
        key = keys[p]
        akey = rng.aux_key(key)
        ikey = rng.aux_key(akey)
        w = 0.0
        i = 0
        integ = 0.0
        qprev = _field_bilinear(q, dtf, hf, 0.0, bnodes[0]) if use_q else 0.0
        tau = -1.0
        spare = 0.0
        while True:
            if i == cap:
                break
            if (i & 1) == 0:
                z, spare = rng.normal_pair(key, i >> 1)
            else:
                z = spare
            w1 = w + sdt * z
            a = bnodes[i] - w
            c = bnodes[i + 1] - w1
            t0 = i * dt
            crossed = c <= 0.0
            if not crossed:
                crossed = rng.uniform(akey, i) < math.exp(-2.0 * a * c / dt)
            if crossed:
                r = _ig_passage(a, c, dt, ikey, i)
                frac = dt * r / (dt + r)
                tc = t0 + frac
                if tc >= horizon:
                    if use_q:
                        integ += qprev * (horizon - t0)
                    tau = horizon
                else:
                    if use_q:
                        qb = _field_bilinear(q, dtf, hf, tc, 0.0)
                        integ += 0.5 * (qprev + qb) * frac
                    tau = tc
                break
            t1 = t0 + dt
            if t1 >= horizon:
                if use_q:
                    integ += qprev * (horizon - t0)
                tau = horizon
                break
            if use_q:
                q1 = _field_bilinear(q, dtf, hf, t1, bnodes[i + 1] - w1)
                integ += 0.5 * (qprev + q1) * dt
                qprev = q1
            w = w1
            i += 1
        tau_out[p] = tau
        integ_out[p] = integ


def _brownian_np(keys, bnodes, dt, horizon, q, dtf, hf, use_q, tau_out, integ_out):
    cap = bnodes.shape[0] - 1
    sdt = math.sqrt(dt)
    P = keys.shape[0]
    akeys = rng.aux_key_np(keys)
    ikeys = rng.aux_key_np(akeys)
    w = np.zeros(P)
    integ = np.zeros(P)
    tau_out[:] = -1.0
    qprev = np.full(P, _bilinear_np(q, dtf, hf, np.zeros(1), np.full(1, bnodes[0]))[0]) if use_q else np.zeros(P)
    active = np.arange(P)
    i = 0
    while active.size and i < cap:
        z = rng.normal_np(keys[active], i)
        w1 = w[active] + sdt * z
        a = bnodes[i] - w[active]
        c = bnodes[i + 1] - w1
        t0 = i * dt
        with np.errstate(over="ignore"):
            pcross = np.exp(-2.0 * a * np.maximum(c, 0.0) / dt)
        crossed = (c <= 0.0) | (rng.uniform_np(akeys[active], i) < pcross)
        if crossed.any():
            idx = active[crossed]
            r = _ig_passage_np(a[crossed], c[crossed], dt, ikeys[idx], i)
            frac = dt * r / (dt + r)
            tc = t0 + frac
            late = tc >= horizon
            if use_q:
                qb = _bilinear_np(q, dtf, hf, tc, np.zeros_like(tc))
                integ[idx] += np.where(late, qprev[idx] * (horizon - t0), 0.5 * (qprev[idx] + qb) * frac)
            tau_out[idx] = np.where(late, horizon, tc)
        keep = ~crossed
        active = active[keep]
        w1 = w1[keep]
        t1 = t0 + dt
        if t1 >= horizon:
            if use_q:
                integ[active] += qprev[active] * (horizon - t0)
            tau_out[active] = horizon
            active = active[:0]
            break
        if use_q:
            q1 = _bilinear_np(q, dtf, hf, np.full(active.size, t1), bnodes[i + 1] - w1)
            integ[active] += 0.5 * (qprev[active] + q1) * dt
            qprev[active] = q1
        w[active] = w1
        i += 1
    integ_out[:] = integ


def _ig_passage_np(a, c, h, keys, i):
    z = rng.normal_np(keys, 2 * i)
    u = rng.uniform_np(rng.aux_key_np(keys), i)
    lam = a * a
    levy = np.abs(c) <= 1e-14 * a
    m = a * h / np.where(levy, 1.0, np.abs(c))
    q = m * z * z / (2.0 * lam)
    root = np.sqrt(q * q + 2.0 * q)
    x = m / (1.0 + q + root)
    out = np.where(u <= m / (m + x), x, m * (1.0 + q + root))
    return np.where(levy, lam / (z * z), out)


def _bilinear_np(q, dtf, hf, t, y):
    nt, ny = q.shape
    ft = np.clip(np.asarray(t, dtype=float) / dtf, 0.0, nt - 1)
    fy = np.clip(np.asarray(y, dtype=float) / hf, 0.0, ny - 1)
    i = np.minimum(ft.astype(np.int64), nt - 2)
    j = np.minimum(fy.astype(np.int64), ny - 2)
    at = ft - i
    ay = fy - j
    return ((1 - at) * ((1 - ay) * q[i, j] + ay * q[i, j + 1])
            + at * ((1 - ay) * q[i + 1, j] + ay * q[i + 1, j + 1]))


def brownian_batch(keys, bnodes, dt, horizon, q=None, dtf=1.0, hf=1.0, backend=None):
    """Brownian first passage with bridge-corrected crossing detection.

    Returns ``(tau, integral)``: ``tau = -1`` marks a capped path; when
    ``horizon`` is finite ``tau`` is ``min(tau0, horizon)``. ``integral`` is
    the trapezoidal path integral of the field ``q`` up to ``tau``.
    """
    P = keys.shape[0]
    use_q = q is not None
    qarr = np.ascontiguousarray(q, dtype=float) if use_q else np.zeros((2, 2))
    tau = np.empty(P)
    integ = np.empty(P)
    pick(_brownian_nb, _brownian_np, backend)(
        keys, bnodes, dt, float(horizon), qarr, float(dtf), float(hf), use_q, tau, integ
    )
    return tau, integ

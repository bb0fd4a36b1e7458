"""Backward recursion ``u_n(t, x) = E u_n(t + 1/n, x + X/sqrt(n))`` for normal ``X``.

Works in the boundary-fitted coordinate ``y = b(t) - x``. The next-step
function is piecewise linear on nodes ``i*h`` with a jump at ``y = 0``:
continuation values ``U`` on ``y > 0`` and stopped values ``F = f0`` on
``y <= 0``. Gaussian expectations of hat functions are closed form, so the
only approximation is the linear interpolation itself.

``E(x) = sigma*phi(x/sigma) - |x|*Phi(-|x|/sigma)`` is the smooth part of
``Psi(x) = E[(x - s)_+]``; writing ``Psi = E + max(x, 0)`` keeps far-tail
weights free of cancellation.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erfc as _erfc_np

from .._accel import njit, pick

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit
def _smooth(x, sigma):
    ax = abs(x)
    z = ax / sigma
    return sigma * _INV_SQRT2PI * math.exp(-0.5 * z * z) - ax * 0.5 * math.erfc(z * _INV_SQRT2)


@njit
def _cdf(x, sigma):
    return 0.5 * math.erfc(-x / sigma * _INV_SQRT2)


@njit
def _hat_weight(a, h, sigma):
    det = 1.0 - abs(a) / h
    if det < 0.0:
        det = 0.0
    return det + (_smooth(a + h, sigma) - 2.0 * _smooth(a, sigma) + _smooth(a - h, sigma)) / h


@njit
def _conv_nb(shifts, F, terminal, h, sigma, D, out):
    nsteps = shifts.shape[0]
    M = terminal.shape[0] - 1
    Mn = F.shape[1] - 1
    U = terminal.copy()
    V = np.empty(M + 1)
    W = np.empty(2 * D + 1)
    for k in range(nsteps - 1, -1, -1):
        c = shifts[k]
        for d in range(-D, D + 1):
            W[d + D] = _hat_weight(d * h - c, h, sigma)
        Fk = F[k + 1]
        for j in range(M + 1):
            acc = 0.0
            lo = j - D
            if lo < 1:
                lo = 1
            hi = j + D
            if hi > M - 1:
                hi = M - 1
            for i in range(lo, hi + 1):
                acc += W[j - i + D] * U[i]
            a0 = j * h - c
            # right half-hat at 0+, left half-hat at 0-, last node with tail
            if a0 < (D + 2) * h:
                r0 = _cdf(a0, sigma) - (_smooth(a0, sigma) + max(a0, 0.0)
                                        - _smooth(a0 - h, sigma) - max(a0 - h, 0.0)) / h
                l0 = (_smooth(a0 + h, sigma) + max(a0 + h, 0.0)
                      - _smooth(a0, sigma) - max(a0, 0.0)) / h - _cdf(a0, sigma)
                acc += r0 * U[0] + l0 * Fk[0]
                mtop = D - j
                if mtop > Mn:
                    mtop = Mn
                for m in range(1, mtop + 1):
                    acc += W[j + m + D] * Fk[m]
            aM = a0 - M * h
            if aM > -(D + 2) * h:
                lM = (_smooth(aM + h, sigma) + max(aM + h, 0.0) - _smooth(aM, sigma) - max(aM, 0.0)) / h
                acc += lM * U[M]
            V[j] = acc
        for j in range(M + 1):
            U[j] = V[j]
    for j in range(M + 1):
        out[j] = U[j]


def _smooth_np(x, sigma):
    ax = np.abs(x)
    z = ax / sigma
    return sigma * _INV_SQRT2PI * np.exp(-0.5 * z * z) - ax * 0.5 * _erfc_np(z * _INV_SQRT2)


def _psi_np(x, sigma):
    return _smooth_np(x, sigma) + np.maximum(x, 0.0)


def _conv_np(shifts, F, terminal, h, sigma, D, out):
    nsteps = shifts.shape[0]
    M = terminal.shape[0] - 1
    Mn = F.shape[1] - 1
    U = terminal.copy()
    d = np.arange(-D, D + 1)
    j = np.arange(M + 1)
    for k in range(nsteps - 1, -1, -1):
        c = shifts[k]
        a = d * h - c
        W = np.maximum(1.0 - np.abs(a) / h, 0.0) + (
            _smooth_np(a + h, sigma) - 2.0 * _smooth_np(a, sigma) + _smooth_np(a - h, sigma)) / h
        Fk = F[k + 1]
        conv = np.convolve(U[1:M], W)
        V = conv[D - 1:D - 1 + M + 1].copy() if D >= 1 else np.zeros(M + 1)
        a0 = j * h - c
        cdf = 0.5 * _erfc_np(-a0 / sigma * _INV_SQRT2)
        r0 = cdf - (_psi_np(a0, sigma) - _psi_np(a0 - h, sigma)) / h
        l0 = (_psi_np(a0 + h, sigma) - _psi_np(a0, sigma)) / h - cdf
        near = a0 < (D + 2) * h
        V += np.where(near, r0 * U[0] + l0 * Fk[0], 0.0)
        for jj in range(min(D, M + 1)):
            mtop = min(D - jj, Mn)
            if mtop >= 1:
                V[jj] += W[jj + 1 + D:jj + mtop + 1 + D] @ Fk[1:mtop + 1]
        aM = a0 - M * h
        lM = (_psi_np(aM + h, sigma) - _psi_np(aM, sigma)) / h
        V += np.where(aM > -(D + 2) * h, lM * U[M], 0.0)
        U = V
    out[:] = U


def conv_sweep(shifts, F, terminal, h, sigma, D, backend=None):
    """Run the recursion from the terminal row back to step 0.

    ``shifts[k] = b(t_k) - b(t_{k+1})``; ``F[k, m] = f0(t_k, b(t_k) + m*h)``;
    ``terminal`` holds ``U`` at the last step on nodes ``0..M``.
    """
    out = np.empty(terminal.shape[0])
    pick(_conv_nb, _conv_np, backend)(
        np.ascontiguousarray(shifts, dtype=float), np.ascontiguousarray(F, dtype=float),
        np.ascontiguousarray(terminal, dtype=float), float(h), float(sigma), int(D), out,
    )
    return out

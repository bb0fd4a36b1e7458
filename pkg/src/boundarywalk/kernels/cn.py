"""Backward Crank-Nicolson sweep in boundary-fitted coordinates.

Solves ``v_t + d(t) v_y + 0.5 v_yy + q = 0`` on ``[0, t_max] x [0, y_max]``
from a terminal row back to ``t = 0`` with Dirichlet data at ``y = 0`` and a
zero-flux far field. The first ``startup`` steps are fully implicit to damp
the high-frequency modes CN leaves alone.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

from .._accel import njit, pick

NEUMANN = 0
CONSTANT = 1


@njit
def _thomas(lower, diag, upper, rhs, out):
    n = diag.shape[0]
    c = np.empty(n)
    d = np.empty(n)
    c[0] = upper[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * c[i - 1]
        c[i] = upper[i] / m
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m
    out[n - 1] = d[n - 1]
    for i in range(n - 2, -1, -1):
        out[i] = d[i] - c[i] * out[i + 1]


@njit
def _apply(v, drift, h, far, out):
    # out[j] = (A v)[j] for j = 1..N; out[0] unused
    n = v.shape[0]
    a = 0.5 / (h * h) - drift / (2.0 * h)
    b = -1.0 / (h * h)
    g = 0.5 / (h * h) + drift / (2.0 * h)
    for j in range(1, n - 1):
        out[j] = a * v[j - 1] + b * v[j] + g * v[j + 1]
    if far == 0:
        out[n - 1] = (a + g) * v[n - 2] + b * v[n - 1]
    else:
        out[n - 1] = a * v[n - 2] + (b + g) * v[n - 1]


@njit
def _cn_nb(drift, data, source, terminal, dt, h, far, startup, out):
    nt = drift.shape[0]
    ny = terminal.shape[0]
    m = ny - 1
    out[nt - 1, :] = terminal
    out[nt - 1, 0] = data[nt - 1]
    av = np.empty(ny)
    lower = np.empty(m)
    diag = np.empty(m)
    upper = np.empty(m)
    rhs = np.empty(m)
    sol = np.empty(m)
    has_src = source.shape[0] == nt
    for step in range(nt - 1, 0, -1):
        theta = 1.0 if (nt - 1 - step) < startup else 0.5
        vn = out[step]
        _apply(vn, drift[step], h, far, av)
        d = drift[step - 1]
        a = 0.5 / (h * h) - d / (2.0 * h)
        b = -1.0 / (h * h)
        g = 0.5 / (h * h) + d / (2.0 * h)
        for j in range(m):
            rhs[j] = vn[j + 1] + (1.0 - theta) * dt * av[j + 1]
            if has_src:
                rhs[j] += dt * (theta * source[step - 1, j + 1] + (1.0 - theta) * source[step, j + 1])
            lower[j] = -theta * dt * a
            diag[j] = 1.0 - theta * dt * b
            upper[j] = -theta * dt * g
        rhs[0] -= lower[0] * data[step - 1]
        lower[0] = 0.0
        if far == 0:
            lower[m - 1] = -theta * dt * (a + g)
        else:
            diag[m - 1] = 1.0 - theta * dt * (b + g)
        upper[m - 1] = 0.0
        _thomas(lower, diag, upper, rhs, sol)
        out[step - 1, 0] = data[step - 1]
        for j in range(m):
            out[step - 1, j + 1] = sol[j]


def _cn_np(drift, data, source, terminal, dt, h, far, startup, out):
    nt = drift.shape[0]
    ny = terminal.shape[0]
    m = ny - 1
    out[nt - 1, :] = terminal
    out[nt - 1, 0] = data[nt - 1]
    has_src = source.shape[0] == nt
    ab = np.zeros((3, m))
    av = np.empty(ny)
    for step in range(nt - 1, 0, -1):
        theta = 1.0 if (nt - 1 - step) < startup else 0.5
        vn = out[step]
        dn = drift[step]
        an, bn, gn = 0.5 / h**2 - dn / (2 * h), -1.0 / h**2, 0.5 / h**2 + dn / (2 * h)
        av[1:-1] = an * vn[:-2] + bn * vn[1:-1] + gn * vn[2:]
        av[-1] = (an + gn) * vn[-2] + bn * vn[-1] if far == NEUMANN else an * vn[-2] + (bn + gn) * vn[-1]
        rhs = vn[1:] + (1.0 - theta) * dt * av[1:]
        if has_src:
            rhs = rhs + dt * (theta * source[step - 1, 1:] + (1.0 - theta) * source[step, 1:])
        d = drift[step - 1]
        a, b, g = 0.5 / h**2 - d / (2 * h), -1.0 / h**2, 0.5 / h**2 + d / (2 * h)
        ab[0, 1:] = -theta * dt * g
        ab[1, :] = 1.0 - theta * dt * b
        ab[2, :-1] = -theta * dt * a
        rhs[0] += theta * dt * a * data[step - 1]
        if far == NEUMANN:
            ab[2, m - 2] = -theta * dt * (a + g)
        else:
            ab[1, m - 1] = 1.0 - theta * dt * (b + g)
        out[step - 1, 0] = data[step - 1]
        out[step - 1, 1:] = solve_banded((1, 1), ab, rhs, check_finite=False)


def cn_solve(drift, data, terminal, dt, h, far=NEUMANN, source=None, startup=2, backend=None):
    """Return the ``(nt, ny)`` solution array, row ``m`` at time ``m * dt``."""
    drift = np.ascontiguousarray(drift, dtype=float)
    data = np.ascontiguousarray(data, dtype=float)
    terminal = np.ascontiguousarray(terminal, dtype=float)
    src = np.zeros((0, 0)) if source is None else np.ascontiguousarray(source, dtype=float)
    out = np.empty((drift.shape[0], terminal.shape[0]))
    pick(_cn_nb, _cn_np, backend)(drift, data, src, terminal, float(dt), float(h), int(far), int(startup), out)
    return out

"""The corrected approximation and its checks.

``E f(tau_n, W_n(tau_n)) ~ u(0,0) + (EX^3 / (6 sqrt n)) w(0,0) + (rho / sqrt n) g(0,0)``

where ``u`` is the Brownian value function, ``w`` accumulates ``u_xxx``
along Brownian paths until the crossing and ``g(0,0) = E Delta(tau0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

from . import pde
from .errors import AssumptionViolation, NumericalRefusal
from .fluctuation import OvershootConstants
from .kernels.conv import conv_sweep
from .model import (Boundary, DeltaTrace, IncrementDistribution, Payoff, Problem, SplitPayoff,
                    content_hash, split_payoff)
from .walk import McEstimate, mc_expectation, payoff_functional

RATE_COLUMNS = ("n", "paths", "mc", "mc_stderr", "uncorrected", "corrected",
                "sqrt_n_abs_resid_corrected", "sqrt_n_abs_resid_uncorrected")


@dataclass(frozen=True, eq=False)
class ExpansionReport:
    leading: float
    skew_term: float
    overshoot_term: float
    m3: float
    rho: float
    w00: float
    g00: float
    provenance: dict
    u: pde.Field | None = field(default=None, repr=False)
    g: pde.Field | None = field(default=None, repr=False)
    w: pde.Field | None = field(default=None, repr=False)
    delta: DeltaTrace | None = field(default=None, repr=False)

    def corrected(self, n) -> Any:
        """``leading + (skew_term + overshoot_term) / sqrt(n)``."""
        return self.leading + (self.skew_term + self.overshoot_term) / np.sqrt(n)

    def to_dict(self) -> dict:
        return {
            "leading": self.leading, "skew_term": self.skew_term, "overshoot_term": self.overshoot_term,
            "m3": self.m3, "rho": self.rho, "w00": self.w00, "g00": self.g00,
            "provenance": self.provenance,
        }


def preflight(boundary: Boundary, dist: IncrementDistribution) -> None:
    dist.require_non_lattice()
    if not boundary.eventually_crosses:
        raise AssumptionViolation("boundary must satisfy b(t) + eps*t -> -inf for some eps > 0", 2)


def solve_fields(problem: Problem, grid: pde.GridConfig, *, cache_dir=None,
                 backend=None) -> tuple[pde.Field, DeltaTrace, pde.Field, pde.Field]:
    """The PDE stages in dependency order: ``u``, then ``Delta``, ``g`` and ``w``."""
    b, f = problem.boundary, problem.payoff
    if f.is_constant:
        return _constant_fields(problem, grid)
    key = {"boundary": b.to_dict(), "payoff": f.to_dict(), "grid": grid.to_dict()}
    u = pde.cached(cache_dir, {**key, "field": "u"},
                   lambda: pde.solve_value(b, f.boundary_data(b), grid, data_hash=f.digest(), backend=backend))
    delta = pde.compute_delta(u, f)
    g = pde.cached(cache_dir, {**key, "field": "g"},
                   lambda: pde.solve_value(b, delta, grid, kind="g", data_hash=delta.digest(), backend=backend))
    w = pde.cached(cache_dir, {**key, "field": "w"},
                   lambda: pde.solve_running_cost(b, pde.third_derivative(u), grid, source_hash=u.digest(),
                                                  backend=backend))
    return u, delta, g, w


def _constant_fields(problem: Problem, grid: pde.GridConfig):
    # f = c is its own value function: u = c, Delta = 0 and u_xxx = 0, so g = w = 0
    c = float(problem.payoff(0.0, 0.0))
    b = problem.boundary
    meta = {"solver": {"scheme": "exact-constant"}, "data_hash": problem.payoff.digest(),
            "truncation": {"p_tail": None, "bias_bound": 0.0, "tolerance": grid.truncation_tol},
            "u_xxx_noise_flag": False, "peclet": None}
    shape = (grid.nt, grid.ny)
    u = pde.Field(np.full(shape, c), grid, b, {**meta, "kind": "u"})
    g = pde.Field(np.zeros(shape), grid, b, {**meta, "kind": "g"})
    w = pde.Field(np.zeros(shape), grid, b, {**meta, "kind": "w"})
    return u, DeltaTrace.zero(grid.t_max), g, w


def assemble(problem: Problem, grid: pde.GridConfig, constants: OvershootConstants | None, *,
             cache_dir=None, backend=None) -> ExpansionReport:
    """Solve for ``u``, ``Delta``, ``g`` and ``w`` and combine them with ``EX^3`` and ``rho``.

    Raises
    ------
    AssumptionViolation
        Lattice increments (assumption 1) or a boundary that need not be
        crossed (assumption 2).
    ValueError
        Missing constants, or constants estimated for another distribution.
    """
    dist = problem.distribution
    preflight(problem.boundary, dist)
    if constants is None:
        raise ValueError("overshoot constants are required")
    if constants.distribution != dist.to_dict():
        raise ValueError("overshoot constants belong to a different distribution")
    u, delta, g, w = solve_fields(problem, grid, cache_dir=cache_dir, backend=backend)
    m3 = dist.moments()["m3"]
    w00 = w.origin
    g00 = g.origin
    skew = 0.0 if m3 == 0 else m3 / 6.0 * w00
    over = constants.rho * g00
    prov = {
        "problem_hash": problem.digest(),
        "grid": grid.to_dict(),
        "u_hash": u.digest(), "g_hash": g.digest(), "w_hash": w.digest(),
        "constants_hash": constants.digest(),
        "truncation": u.metadata["truncation"],
        "u_xxx_noise_flag": u.metadata["u_xxx_noise_flag"],
    }
    return ExpansionReport(u.origin, skew, over, m3, constants.rho, w00, g00, prov, u, g, w, delta)


# ---------------------------------------------------------------------------
# e_n diagnostic


def quadrature(dist: IncrementDistribution, points: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights integrating against the increment law."""
    kind = dist.kind
    if kind == "standard-normal":
        x, w = np.polynomial.hermite.hermgauss(points)
        return math.sqrt(2.0) * x, w / math.sqrt(math.pi)
    if kind == "centered-exponential":
        x, w = np.polynomial.laguerre.laggauss(points)
        return x - 1.0, w
    if kind == "uniform-symmetric":
        x, w = np.polynomial.legendre.leggauss(points)
        return math.sqrt(3.0) * x, 0.5 * w
    if kind == "gaussian-mixture":
        w_mix, mu, sd, m, v = dist._mixture_standardisation()
        x, w = np.polynomial.hermite.hermgauss(points)
        z, wz = math.sqrt(2.0) * x, w / math.sqrt(math.pi)
        nodes = np.concatenate([(mu[i] + sd[i] * z - m) / math.sqrt(v) for i in range(2)])
        weights = np.concatenate([w_mix[i] * wz for i in range(2)])
        return nodes, weights
    if kind == "two-point":
        return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
    return np.array([dist.params["value"]]), np.array([1.0])


class _LocalFit:
    """Tensor least-squares polynomial of a field around one probe.

    Chebyshev basis in scaled ``(t, y)``; fitted on ``6`` time rows and a
    symmetric window of space nodes. Points outside the window fall back to
    the field's own interpolation.
    """

    def __init__(self, field: pde.Field, t0: float, t1: float, y0: float, half: float,
                 deg_t: int = 4, deg_y: int = 10):
        g = field.grid
        m0 = int(np.clip(math.floor(t0 / g.dt) - 2, 0, g.nt - 6))
        rows = np.arange(m0, m0 + 6)
        if g.times()[rows[-1]] < t1:
            raise ValueError("time window too short for the probe; refine nt")
        half = max(half, 8 * g.h)
        j0 = max(int(math.floor((y0 - half) / g.h)), 0)
        j1 = min(int(math.ceil((y0 + half) / g.h)), g.ny - 1)
        cols = np.arange(j0, j1 + 1)
        self.t_lo, self.t_hi = g.times()[rows[0]], g.times()[rows[-1]]
        self.y_lo, self.y_hi = cols[0] * g.h, cols[-1] * g.h
        deg_y = min(deg_y, cols.size - 1)
        At = np.polynomial.chebyshev.chebvander(self._st(g.times()[rows]), deg_t)
        Ay = np.polynomial.chebyshev.chebvander(self._sy(cols * g.h), deg_y)
        V = field.values[np.ix_(rows, cols)]
        self.coef = np.linalg.lstsq(At, np.linalg.lstsq(Ay, V.T, rcond=None)[0].T, rcond=None)[0]
        self.field = field

    def _st(self, t):
        return 2.0 * (np.asarray(t) - self.t_lo) / (self.t_hi - self.t_lo) - 1.0

    def _sy(self, y):
        return 2.0 * (np.asarray(y) - self.y_lo) / (self.y_hi - self.y_lo) - 1.0

    def __call__(self, t, y):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        t, y = np.broadcast_arrays(t, y)
        inside = (y >= self.y_lo) & (y <= self.y_hi) & (t >= self.t_lo) & (t <= self.t_hi)
        out = np.empty(t.shape)
        if inside.any():
            out[inside] = np.polynomial.chebyshev.chebval2d(self._st(t[inside]), self._sy(y[inside]), self.coef)
        rest = ~inside
        if rest.any():
            out[rest] = self.field.at(t[rest], np.clip(y[rest], 0.0, self.field.grid.y_max))
        return out


def extended_value(field: pde.Field, split: SplitPayoff, fit: _LocalFit | None, t, x):
    """``u-bar``: the value function below the boundary and ``f0`` on or above it."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    t, x = np.broadcast_arrays(t, x)
    y = field.boundary(t) - x
    out = np.empty(t.shape)
    above = y <= 0
    if above.any():
        out[above] = split.f0(t[above], x[above])
    below = ~above
    if below.any():
        src = fit if fit is not None else field.at
        out[below] = src(t[below], y[below])
    return out


def e_n_diagnostic(u_field: pde.Field, payoff: Payoff, delta: DeltaTrace, dist: IncrementDistribution,
                   n: int, probes: Sequence[tuple[float, float]], *, points: int = 64) -> list[dict]:
    """``e_n(t, x) = E u-bar(t + 1/n, x + X/sqrt(n)) - u-bar(t, x)`` at interior probes.

    Each row carries the quadrature value, the leading prediction
    ``EX^3 u_xxx / (6 n sqrt(n))`` with ``u_xxx`` read from the field's third
    differences, and both remainder envelopes ``1/n**2`` and
    ``(1/n) / (1 + n (b - x)**2)``.
    """
    m3 = dist.moments()["m3"]
    nodes, weights = quadrature(dist, points)
    split = split_payoff(payoff, u_field.boundary, delta)
    uxxx = pde.third_derivative(u_field)
    uxxx_field = pde.Field(uxxx, u_field.grid, u_field.boundary)
    sn = math.sqrt(n)
    rows = []
    for t, x in probes:
        y = float(u_field.boundary(t) - x)
        if y <= 0:
            raise ValueError(f"probe ({t}, {x}) is not below the boundary")
        if n * y * y < 1:
            raise ValueError(f"probe ({t}, {x}) too close to the boundary for n={n}")
        t1 = t + 1.0 / n
        shift = u_field.boundary(t) - u_field.boundary(t1)
        spread = 10.0 / sn + abs(shift)
        fit = _LocalFit(u_field, t, t1, y, spread)
        here = float(extended_value(u_field, split, fit, t, x))
        there = extended_value(u_field, split, fit, np.full(nodes.shape, t1), x + nodes / sn)
        e_n = float(weights @ there - here * weights.sum())
        u3 = float(uxxx_field.at(t, y))
        pred = m3 * u3 / (6.0 * n * sn)
        rows.append({
            "n": n, "t": t, "x": x, "y": y, "e_n": e_n, "predicted": pred, "residual": e_n - pred,
            "u_xxx": u3,
            "scaled": e_n * 6.0 * n * sn / m3 if m3 != 0 else float("nan"),
            "envelope_smooth": 1.0 / n**2, "envelope_boundary": (1.0 / n) / (1.0 + n * y * y),
        })
    return rows


def richardson_field(coarse: pde.Field, fine: pde.Field) -> pde.Field:
    """``(4 fine - coarse) / 3`` on the coarse nodes."""
    meta = dict(coarse.metadata)
    meta["richardson"] = True
    return pde.Field(pde.richardson(coarse.values, fine.values), coarse.grid, coarse.boundary, meta)


def extrapolated_value_field(boundary: Boundary, payoff: Payoff, grid: pde.GridConfig, *,
                             backend=None) -> pde.Field:
    """``u`` on ``grid`` and on its refinement, Richardson-combined.

    The smooth part of the scheme error would otherwise leak into ``e_n``
    at roughly ``h**2 / n``, which swamps the ``1/n**2`` signal of
    symmetric increments by ``n = 10**4``.
    """
    data = payoff.boundary_data(boundary)
    coarse = pde.solve_value(boundary, data, grid, data_hash=payoff.digest(), backend=backend)
    fine = pde.solve_value(boundary, data, grid.refined(), data_hash=payoff.digest(), backend=backend)
    return richardson_field(coarse, fine)


# ---------------------------------------------------------------------------
# convolution oracle


@dataclass(frozen=True)
class ConvolutionResult:
    value: float
    fine: float
    coarse: float
    error_bound: float
    n: int
    h: float
    steps: int
    t_max: float


def convolution_oracle(boundary: Boundary, f0: Callable, dist: IncrementDistribution, n: int, *,
                       t_max: float = 24.0, y_max: float = 8.0, points_per_sigma: int = 32,
                       max_n: int = 512, terminal: float | None = None, backend=None) -> ConvolutionResult:
    """Backward recursion for ``u_n(0, 0) = E f0(tau_n, W_n(tau_n))`` with normal increments.

    Paths still running after ``n * t_max`` steps are paid
    ``f0(t_max, b(t_max))`` (or ``terminal``), mirroring the PDE horizon.
    The recursion is run with spacing ``h`` and ``2h``; the reported value is
    their Richardson combination and ``error_bound = |u_h - u_2h| / 3``.
    """
    if dist.kind != "standard-normal":
        raise NumericalRefusal("the convolution oracle supports standard-normal increments only")
    if n > max_n:
        raise NumericalRefusal(f"n={n} exceeds max_n={max_n}; the recursion cost grows like n**2")
    sigma = 1.0 / math.sqrt(n)
    h = sigma / points_per_sigma
    if 2 * h > sigma / 4:
        raise NumericalRefusal("grid under-resolved: need at least 8 points per sigma")
    steps = int(round(n * t_max))
    times = np.arange(steps + 1) / n
    bt = np.asarray(boundary(times), dtype=float)
    shifts = bt[:-1] - bt[1:]
    term = float(f0(times[-1], bt[-1])) if terminal is None else float(terminal)

    def run(hh):
        M = int(math.ceil(y_max / hh))
        D = int(math.ceil((12.0 * sigma + np.max(np.abs(shifts))) / hh)) + 1
        m = np.arange(D + 2)
        F = np.asarray(f0(times[:, None], bt[:, None] + m[None, :] * hh), dtype=float)
        U = conv_sweep(shifts, F, np.full(M + 1, term), hh, sigma, D, backend=backend)
        # cubic Lagrange at y = b(0)
        fy = bt[0] / hh
        j = min(max(int(math.floor(fy)) - 1, 0), M - 3)
        s = fy - j
        val = 0.0
        for k in range(4):
            wk = 1.0
            for q in range(4):
                if q != k:
                    wk *= (s - q) / (k - q)
            val += wk * U[j + k]
        return val

    fine = run(h)
    coarse = run(2 * h)
    return ConvolutionResult((4 * fine - coarse) / 3, fine, coarse, abs(fine - coarse) / 3, n, h, steps, t_max)


def truncated_f0(split: SplitPayoff, t_max: float) -> Callable:
    """``f0(tau, W)`` for ``tau <= t_max``, else ``f(t_max, b(t_max))``: the oracle's functional."""
    b = split.boundary
    late = float(split.payoff(t_max, b(t_max)))

    def fn(tau, x):
        tau, x = np.broadcast_arrays(np.asarray(tau, dtype=float), np.asarray(x, dtype=float))
        out = np.full(tau.shape, late)
        ok = tau <= t_max + 1e-12
        if ok.any():
            out[ok] = split.f0(np.minimum(tau[ok], t_max), x[ok])
        return out

    return fn


# ---------------------------------------------------------------------------
# rate study


def rate_study(problem: Problem, report: ExpansionReport, n_list: Sequence[int], paths: int,
               master_seed: int, *, threads: int = 1, batch: int | None = None,
               backend=None) -> dict:
    """Monte Carlo against the corrected and uncorrected predictions over ``n_list``.

    Returns ``rows`` (dicts keyed by :data:`RATE_COLUMNS`) and ``trend``:
    Kendall's tau of ``sqrt(n) |mc - corrected|`` against ``n``. The trend is
    "signal" only when every corrected residual exceeds 3 MC stderr;
    otherwise it is reported as inconclusive (and passes).
    """
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3 or any(a >= b for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n list must be increasing with at least 3 values")
    preflight(problem.boundary, problem.distribution)
    kw = {"threads": threads, "backend": backend}
    if batch:
        kw["batch"] = batch
    fn = payoff_functional(problem.payoff)
    rows = []
    for n in n_list:
        est = mc_expectation(fn, n, problem.distribution, problem.boundary, paths, master_seed, **kw)
        rows.append(rate_row(n, est, report))
    return {"rows": rows, "trend": trend_statistics(rows)}


def rate_row(n: int, est: McEstimate, report: ExpansionReport) -> dict:
    corr = float(report.corrected(n))
    sn = math.sqrt(n)
    return {
        "n": n, "paths": est.paths, "mc": est.mean, "mc_stderr": est.stderr,
        "uncorrected": report.leading, "corrected": corr,
        "sqrt_n_abs_resid_corrected": sn * abs(est.mean - corr),
        "sqrt_n_abs_resid_uncorrected": sn * abs(est.mean - report.leading),
    }


def trend_statistics(rows: Sequence[dict]) -> dict:
    if len(rows) < 2:
        return {"kendall_tau": float("nan"), "status": "inconclusive"}
    ns = [r["n"] for r in rows]
    res = [r["sqrt_n_abs_resid_corrected"] for r in rows]
    tau = float(stats.kendalltau(ns, res).statistic)
    signal = all(abs(r["mc"] - r["corrected"]) > 3 * r["mc_stderr"] for r in rows)
    if not signal:
        status = "inconclusive-pass"
    else:
        status = "pass" if tau <= 0 else "fail"
    return {"kendall_tau": tau, "status": status}


def problem_hash(problem: Problem, grid: pde.GridConfig) -> str:
    return content_hash({"problem": problem.to_dict(), "grid": grid.to_dict()})

"""Monte Carlo for the scaled walk's first passage and its Brownian limit.

Path ``i`` under master seed ``s`` always draws from stream ``(s, i)``, and
paths are processed in fixed batches whose partial moments are merged in
batch order. Thread count therefore changes wall time only.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import rng
from .errors import AssumptionViolation, StepCapExceeded
from .kernels import walk as kw
from .model import Boundary, DeltaTrace, IncrementDistribution, boundary_level

BATCH = 1 << 16
CAP_FACTOR = 50.0
T_MAX = 12.0


@dataclass(frozen=True)
class CrossingRecord:
    """One first passage of ``S_k`` over ``b_k = sqrt(n) b(k/n)``."""

    stop_index: int
    tau: float
    terminal: float
    overshoot: float
    steps_near_boundary: dict = field(default_factory=dict)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    stderr: float
    paths: int
    seed: int

    def within(self, value: float, k: float = 3.0, extra: float = 0.0) -> bool:
        return abs(self.mean - value) <= k * self.stderr + extra


@dataclass(frozen=True)
class CrossingBatch:
    """Vectorised crossing records for one batch of consecutive paths."""

    path_id: np.ndarray
    stop_index: np.ndarray
    tau: np.ndarray
    terminal: np.ndarray
    overshoot: np.ndarray


# ---------------------------------------------------------------------------
# moment accumulation (Chan et al. pairwise merge, applied in batch order)


class _Moments:
    def __init__(self, k: int):
        self.count = 0
        self.mean = np.zeros(k)
        self.comoment = np.zeros((k, k))

    def add(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        m = x.shape[0]
        if m == 0:
            return
        mb = x.mean(axis=0)
        d = x - mb
        cb = d.T @ d
        n = self.count
        delta = mb - self.mean
        tot = n + m
        self.mean = self.mean + delta * (m / tot)
        self.comoment = self.comoment + cb + np.outer(delta, delta) * (n * m / tot)
        self.count = tot

    def covariance(self) -> np.ndarray:
        return self.comoment / max(self.count - 1, 1)

    def estimates(self, seed: int) -> list[McEstimate]:
        var = np.diag(self.covariance())
        se = np.sqrt(np.maximum(var, 0.0) / max(self.count, 1))
        return [McEstimate(float(m), float(s), self.count, int(seed)) for m, s in zip(self.mean, se)]


def _batches(paths: int, batch: int) -> list[tuple[int, int]]:
    return [(start, min(batch, paths - start)) for start in range(0, paths, batch)]


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# scaled walk


def step_cap(n: int, t_max: float = T_MAX, cap_factor: float = CAP_FACTOR) -> int:
    return int(math.ceil(cap_factor * n * t_max))


def _require_crossing(boundary: Boundary) -> None:
    if not boundary.eventually_crosses:
        raise AssumptionViolation(
            "boundary has no eps > 0 with b(t) + eps*t -> -inf, so tau_n need not be uniformly integrable", 2
        )


class _Walk:
    """Shared setup for batches of one (n, dist, boundary) configuration."""

    def __init__(self, n, dist, boundary, seed, t_max, cap_factor, backend, single=False):
        if n < 1:
            raise ValueError("n must be >= 1")
        if not single:
            _require_crossing(boundary)
        self.n = int(n)
        self.dist = dist
        self.seed = int(seed)
        self.sqrt_n = math.sqrt(n)
        self.cap = step_cap(n, t_max, cap_factor)
        self.levels = np.ascontiguousarray(boundary_level(boundary, np.arange(self.cap + 1), n), dtype=float)
        self.backend = backend

    def keys(self, start: int, count: int) -> np.ndarray:
        return rng.stream_keys(self.seed, start, count)

    def _wrap(self, start, stop, s) -> CrossingBatch:
        if np.any(stop < 0):
            bad = start + int(np.flatnonzero(stop < 0)[0])
            raise StepCapExceeded(
                f"path {bad} did not cross within {self.cap} steps (n={self.n}); "
                "raise the cap factor rather than censor"
            )
        ids = np.arange(start, start + stop.shape[0], dtype=np.int64)
        return CrossingBatch(ids, stop, stop / self.n, s / self.sqrt_n, s - self.levels[stop])

    def batch(self, start: int, count: int) -> CrossingBatch:
        stop, s = kw.crossing_batch(self.keys(start, count), self.levels, self.dist.code,
                                    self.dist.code_params, backend=self.backend)
        return self._wrap(start, stop, s)

    def diagnostics(self, start, count, d_values, b_lo, b_hi, alpha):
        stop, s, n_d, growth, m_b = kw.diagnostics_batch(
            self.keys(start, count), self.levels, self.dist.code, self.dist.code_params,
            np.asarray(d_values, dtype=float), np.asarray(b_lo, dtype=float),
            np.asarray(b_hi, dtype=float), float(alpha), backend=self.backend,
        )
        return self._wrap(start, stop, s), n_d, growth, m_b


def simulate_crossing(n: int, dist: IncrementDistribution, boundary: Boundary, path_seed: int,
                      path_index: int = 0, *, d_values: Iterable[float] = (), t_max: float = T_MAX,
                      cap_factor: float = CAP_FACTOR, backend=None) -> CrossingRecord:
    """Simulate one path; identical to path ``path_index`` of :func:`mc_expectation` under ``path_seed``.

    A single path does not need uniform integrability, so boundaries without
    eventual crossing are allowed here; the step cap still applies.
    """
    w = _Walk(n, dist, boundary, path_seed, t_max, cap_factor, backend, single=True)
    d_values = [float(d) for d in d_values]
    if any(d <= 0 for d in d_values):
        raise ValueError("d values must be positive")
    if d_values:
        b, n_d, _, _ = w.diagnostics(path_index, 1, d_values, [], [], 1.0)
        near = {d: int(c) for d, c in zip(d_values, n_d[0])}
    else:
        b = w.batch(path_index, 1)
        near = {}
    return CrossingRecord(int(b.stop_index[0]), float(b.tau[0]), float(b.terminal[0]),
                          float(b.overshoot[0]), near)


def run_statistics(stat: Callable[[CrossingBatch], np.ndarray], n: int, dist: IncrementDistribution,
                   boundary: Boundary, paths: int, master_seed: int, *, threads: int = 1,
                   batch: int = BATCH, t_max: float = T_MAX, cap_factor: float = CAP_FACTOR,
                   backend=None) -> _Moments:
    """Accumulate the per-path statistic vectors ``stat(batch)`` (shape ``(P,)`` or ``(P, k)``)."""
    if paths < 2:
        raise ValueError("need at least 2 paths")
    w = _Walk(n, dist, boundary, master_seed, t_max, cap_factor, backend)

    def one(item):
        start, count = item
        x = np.asarray(stat(w.batch(start, count)), dtype=float)
        return x.reshape(count, -1)

    acc = None
    for x in _map(one, _batches(paths, batch), threads):
        if acc is None:
            acc = _Moments(x.shape[1])
        acc.add(x)
    return acc


def mc_expectation(functional: Callable[[CrossingBatch], np.ndarray], n: int, dist: IncrementDistribution,
                   boundary: Boundary, paths: int, master_seed: int, **kw) -> McEstimate:
    """Monte Carlo mean and standard error of ``functional`` over crossing records.

    ``functional`` maps a :class:`CrossingBatch` to one value per path. Any
    path that reaches the step cap aborts the estimate with
    :class:`StepCapExceeded`.
    """
    return run_statistics(functional, n, dist, boundary, paths, master_seed, **kw).estimates(master_seed)[0]


def payoff_functional(f: Callable) -> Callable[[CrossingBatch], np.ndarray]:
    """``f(tau_n, W_n(tau_n))`` as a batch functional."""
    return lambda b: np.asarray(f(b.tau, b.terminal), dtype=float) + np.zeros_like(b.tau)


def joint_overshoot_stats(n: int, dist: IncrementDistribution, boundary: Boundary, paths: int,
                          master_seed: int, delta: DeltaTrace | None = None,
                          payoff: Callable | None = None, **kw) -> dict:
    """Overshoot mean and variance, ``corr(R_n, tau_n)`` and ``E[R_n Delta(tau_n)]``.

    ``Delta`` is read off the trace at the simulated ``tau_n``; stops later
    than the trace window are excluded (counted as zero) and their fraction
    reported. If ``payoff`` is given, ``E f(tau_n, W_n(tau_n))`` is
    estimated from the same paths.
    """
    hi = delta.window[1] if delta is not None else math.inf

    def stat(b: CrossingBatch):
        cols = [b.overshoot, b.tau]
        if delta is not None:
            inside = b.tau <= hi
            d = np.zeros_like(b.tau)
            d[inside] = delta(b.tau[inside])
            cols += [b.overshoot * d, (~inside).astype(float)]
        if payoff is not None:
            cols.append(np.asarray(payoff(b.tau, b.terminal), dtype=float) + np.zeros_like(b.tau))
        return np.column_stack(cols)

    acc = run_statistics(stat, n, dist, boundary, paths, master_seed, **kw)
    est = acc.estimates(master_seed)
    cov = acc.covariance()
    var_r = float(cov[0, 0])
    corr = float(cov[0, 1] / math.sqrt(cov[0, 0] * cov[1, 1])) if cov[0, 0] > 0 and cov[1, 1] > 0 else 0.0
    # fourth-moment-free approximation for the stderr of the variance
    out = {
        "n": n,
        "paths": acc.count,
        "mean_R": est[0],
        "var_R": var_r,
        "mean_tau": est[1],
        "corr_R_tau": corr,
        "corr_stderr": (1.0 - corr * corr) / math.sqrt(max(acc.count - 3, 1)),
    }
    i = 2
    if delta is not None:
        out["E_R_delta"] = est[2]
        out["excluded_fraction"] = est[3].mean
        i = 4
    if payoff is not None:
        out["payoff"] = est[i]
    return out


def overshoot_moments(n: int, dist: IncrementDistribution, boundary: Boundary, paths: int,
                      master_seed: int, c_values: Sequence[float] = (1.0, 2.0, 4.0, 8.0), **kw) -> dict:
    """``E R_n``, ``E R_n**2`` and the tails ``E[R_n**2; R_n > c]``."""
    c = np.asarray(c_values, dtype=float)

    def stat(b: CrossingBatch):
        r = b.overshoot
        r2 = r * r
        return np.column_stack([r, r2, r2[:, None] * (r[:, None] > c[None, :])])

    est = run_statistics(stat, n, dist, boundary, paths, master_seed, **kw).estimates(master_seed)
    return {"n": n, "mean_R": est[0], "mean_R2": est[1], "tail_R2": dict(zip(c.tolist(), est[2:]))}


def visit_counts(n: int, dist: IncrementDistribution, boundary: Boundary, paths: int, master_seed: int,
                 d_values: Sequence[float] = (0.5, 1.0, 2.0, 4.0),
                 intervals: Sequence[tuple[float, float]] = (), alpha: float = 1.0, *,
                 threads: int = 1, batch: int = BATCH, t_max: float = T_MAX,
                 cap_factor: float = CAP_FACTOR, backend=None) -> dict:
    """Near-boundary diagnostics in the unscaled walk.

    ``N_d`` counts pre-crossing steps ``k`` with ``S_k > b_k - d``;
    ``M_B(alpha)`` counts steps ``k <= alpha * stop`` with ``b_k - S_k`` in
    the interval ``B``; ``growth`` is ``sum_{k < stop} 1/(1 + (b_k - S_k)**2)``.
    """
    d = np.asarray(d_values, dtype=float)
    if np.any(d <= 0):
        raise ValueError("d values must be positive")
    lo = np.array([a for a, _ in intervals], dtype=float)
    hi = np.array([b for _, b in intervals], dtype=float)
    w = _Walk(n, dist, boundary, master_seed, t_max, cap_factor, backend)

    def one(item):
        start, count = item
        _, n_d, growth, m_b = w.diagnostics(start, count, d, lo, hi, alpha)
        return np.column_stack([n_d.astype(float), growth, m_b.astype(float)])

    acc = _Moments(d.size + 1 + lo.size)
    for x in _map(one, _batches(paths, batch), threads):
        acc.add(x)
    est = acc.estimates(master_seed)
    return {
        "n": n,
        "d": d.tolist(),
        "N_d": est[:d.size],
        "growth": est[d.size],
        "M_B": dict(zip([tuple(map(float, b)) for b in intervals], est[d.size + 1:])),
    }


def stream_records_csv(path: str | Path, n: int, dist: IncrementDistribution, boundary: Boundary,
                       paths: int, master_seed: int, *, batch: int = BATCH, t_max: float = T_MAX,
                       cap_factor: float = CAP_FACTOR, backend=None, header: Sequence[str] = ()) -> Path:
    """Write one row per path: ``path_id, stop_index, tau, terminal, overshoot``."""
    w = _Walk(n, dist, boundary, master_seed, t_max, cap_factor, backend)
    p = Path(path)
    with p.open("w", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["path_id", "stop_index", "tau", "terminal", "overshoot"])
        for start, count in _batches(paths, batch):
            b = w.batch(start, count)
            for row in zip(b.path_id, b.stop_index, b.tau, b.terminal, b.overshoot):
                out.writerow([int(row[0]), int(row[1])] + [f"{v:.12g}" for v in row[2:]])
    return p


# ---------------------------------------------------------------------------
# Brownian oracle


def brownian_oracle(boundary: Boundary, dt: float, paths: int, master_seed: int, *,
                    data: Callable | None = None, source=None, horizon: float = math.inf,
                    t_cap: float = CAP_FACTOR * T_MAX, threads: int = 1, batch: int = BATCH,
                    backend=None) -> McEstimate:
    """Brownian first-passage expectation with bridge-corrected crossing detection.

    Parameters
    ----------
    boundary : Boundary
    dt : float
        Euler step; crossings inside a step are detected with the bridge
        probability ``exp(-2 a c / dt)`` and timed exactly.
    data : callable, optional
        ``t -> data(t)``: estimates ``E data(tau0 ^ horizon)``.
    source : (array, GridConfig) or Field, optional
        Estimates ``E int_0^{tau0 ^ horizon} q(t, W_t) dt`` with ``q`` given
        in boundary-fitted coordinates and interpolated bilinearly.
    horizon : float
        Stop the clock here (to match a truncated PDE solve).
    """
    if (data is None) == (source is None):
        raise ValueError("give exactly one of data or source")
    if paths < 2:
        raise ValueError("need at least 2 paths")
    if dt > 1e-3 + 1e-15:
        raise ValueError("dt must be <= 1e-3")
    end = min(horizon, t_cap)
    cap = int(math.ceil(end / dt - 1e-9))
    bnodes = np.ascontiguousarray(boundary(np.arange(cap + 1) * dt), dtype=float)
    q = None
    dtf = hf = 1.0
    if source is not None:
        if hasattr(source, "values"):
            q, g = source.values, source.grid
        else:
            q, g = source
        dtf, hf = g.dt, g.h

    def one(item):
        start, count = item
        keys = rng.stream_keys(master_seed, start, count)
        tau, integ = kw.brownian_batch(keys, bnodes, dt, horizon, q=q, dtf=dtf, hf=hf, backend=backend)
        if np.any(tau < 0):
            raise StepCapExceeded(f"Brownian path did not cross before t = {end}")
        if data is not None:
            return np.asarray(data(tau), dtype=float) + np.zeros_like(tau)
        return integ

    acc = _Moments(1)
    for x in _map(one, _batches(paths, batch), threads):
        acc.add(x)
    return acc.estimates(master_seed)[0]

"""Ladder variables: the overshoot constant rho, the function H, the renewal measure.

``T_x = inf{k >= 1: x + S_k >= 0}`` for ``x <= 0``; the ladder height is
``Y = S_{T_0}`` and ``rho = E Y**2 / (2 E Y)`` is the mean of the limiting
overshoot. ``H(x) = x - rho`` for ``x >= 0`` and ``E[S_{T_x} + x] - rho``
below zero; ``H(S_k - b_k)`` is a martingale below the boundary.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng
from .errors import NumericalRefusal
from .kernels.ladder import ladder_batch, renewal_batch
from .model import IncrementDistribution, content_hash, increments_np
from .walk import BATCH, McEstimate, _batches, _map, _Moments

DEFAULT_CAP = 10**6
MAX_CAPPED_FRACTION = 1e-3

# stream offsets keeping the different uses of one master seed disjoint
_OUTER_STREAM = 1 << 40
_INNER_STREAM = 2 << 40


@dataclass(frozen=True)
class LadderSample:
    epoch: int
    height: float
    capped: bool


@dataclass(frozen=True)
class OvershootConstants:
    """Moments of the ascending ladder height and ``rho = EY2 / (2 EY)``."""

    rho: float
    rho_stderr: float
    EY: float
    EY2: float
    EY3: float
    epochs_used: int
    epochs_capped: int
    cap: int
    distribution: dict
    seed: int

    @property
    def capped_fraction(self) -> float:
        total = self.epochs_used + self.epochs_capped
        return self.epochs_capped / total if total else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distribution_hash"] = content_hash(self.distribution)
        d["capped_fraction"] = self.capped_fraction
        return d

    def digest(self) -> str:
        return content_hash(self.to_dict())

    def save(self, path: str | Path) -> Path:
        p = Path(path)
        p.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")
        return p

    @classmethod
    def from_dict(cls, d: dict) -> "OvershootConstants":
        keep = {k: d[k] for k in cls.__dataclass_fields__}
        return cls(**keep)

    @classmethod
    def load(cls, path: str | Path) -> "OvershootConstants":
        """Read :meth:`save` output or a report artifact wrapping it under ``data``."""
        d = json.loads(Path(path).read_text())
        return cls.from_dict(d["data"] if "data" in d and "provenance" in d else d)


def sample_ladder(dist: IncrementDistribution, x: float, cap: int, seed: int, index: int = 0,
                  backend=None) -> LadderSample:
    """One draw of ``(T_x, S_{T_x} + x)``; a capped walk is returned as data, not raised."""
    if x > 0:
        raise ValueError("x must be <= 0")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    keys = rng.stream_keys(seed, index, 1)
    ep, h = ladder_batch(keys, x, cap, dist.code, dist.code_params, backend=backend)
    if ep[0] < 0:
        return LadderSample(int(cap), float("nan"), True)
    return LadderSample(int(ep[0]), float(h[0]), False)


def _exact_law(dist, allowed: bool) -> bool:
    return allowed and dist.kind == "centered-exponential"


def _ladder_heights(dist, x, epochs, cap, seed, start, threads, batch, backend, cols, exact):
    """Accumulate ``cols(heights)`` over uncapped epochs; returns (moments, capped count)."""

    def one(item):
        s0, count = item
        keys = rng.stream_keys(seed, start + s0, count)
        if exact:
            # memorylessness: the overshoot of 0 is exactly Exp(1) from any x <= 0
            h = -np.log(rng.uniform_np(keys, 0))
            return cols(h), 0
        ep, h = ladder_batch(keys, x, cap, dist.code, dist.code_params, backend=backend)
        ok = ep >= 0
        return cols(h[ok]), int((~ok).sum())

    acc = None
    capped = 0
    for vals, c in _map(one, _batches(epochs, batch), threads):
        if acc is None:
            acc = _Moments(vals.shape[1])
        acc.add(vals)
        capped += c
    return acc, capped


def _check_capped(capped: int, total: int, cap: int) -> None:
    frac = capped / total
    if frac >= MAX_CAPPED_FRACTION:
        raise NumericalRefusal(
            f"{capped} of {total} ladder epochs hit the cap {cap} (fraction {frac:.2e} >= "
            f"{MAX_CAPPED_FRACTION:g}); raise the cap"
        )


def estimate_rho(dist: IncrementDistribution, epochs: int, master_seed: int, cap: int = DEFAULT_CAP, *,
                 threads: int = 1, batch: int = BATCH, exact_shortcut: bool = False,
                 backend=None) -> OvershootConstants:
    """Plug-in ``rho`` from simulated ladder heights, with a delta-method stderr.

    Parameters
    ----------
    dist : IncrementDistribution
    epochs : int
        Number of ladder epochs, at least ``1e4``.
    master_seed : int
    cap : int
        Steps after which an epoch is abandoned. Abandoned epochs are
        excluded and counted; their fraction must stay below ``1e-3``.
    exact_shortcut : bool
        For centered-exponential increments, draw heights from their exact
        Exp(1) law instead of walking.

    Raises
    ------
    NumericalRefusal
        If the capped fraction reaches ``1e-3``.
    """
    if epochs < 10**4:
        raise ValueError("need at least 1e4 epochs")
    acc, capped = _ladder_heights(dist, 0.0, epochs, cap, master_seed, 0, threads, batch, backend,
                                  lambda h: np.column_stack([h, h * h, h**3]),
                                  _exact_law(dist, exact_shortcut))
    _check_capped(capped, epochs, cap)
    ey, ey2, ey3 = acc.mean
    cov = acc.covariance()[:2, :2] / acc.count
    grad = np.array([-ey2 / (2 * ey * ey), 1.0 / (2 * ey)])
    se = math.sqrt(max(float(grad @ cov @ grad), 0.0))
    return OvershootConstants(float(ey2 / (2 * ey)), se, float(ey), float(ey2), float(ey3),
                              acc.count, capped, int(cap), dist.to_dict(), int(master_seed))


def overshoot_mean(dist: IncrementDistribution, x: float, epochs: int, master_seed: int,
                   cap: int = DEFAULT_CAP, *, stream_offset: int = 0, threads: int = 1,
                   batch: int = BATCH, exact_shortcut: bool = True, backend=None) -> McEstimate:
    """``E[S_{T_x} + x]`` for ``x <= 0`` by fresh walks (exact law for centered-exponential)."""
    if x > 0:
        raise ValueError("x must be <= 0")
    acc, capped = _ladder_heights(dist, float(x), epochs, cap, master_seed, stream_offset, threads,
                                  batch, backend, lambda h: h[:, None], _exact_law(dist, exact_shortcut))
    _check_capped(capped, epochs, cap)
    return acc.estimates(master_seed)[0]


def estimate_H(dist: IncrementDistribution, x: float, epochs: int, master_seed: int,
               constants: OvershootConstants, cap: int = DEFAULT_CAP, **kw) -> tuple[float, float]:
    """``(H(x), stderr)``; exact ``x - rho`` for ``x >= 0``.

    The stderr of the ``x < 0`` branch combines the overshoot-mean and
    ``rho`` uncertainties.
    """
    if constants.distribution != dist.to_dict():
        raise ValueError("constants were estimated for a different distribution")
    if x >= 0:
        return float(x - constants.rho), 0.0
    m = overshoot_mean(dist, x, epochs, master_seed, cap, **kw)
    return m.mean - constants.rho, math.hypot(m.stderr, constants.rho_stderr)


def check_H_harmonic(dist: IncrementDistribution, xs: Sequence[float], epochs: int, master_seed: int,
                     cap: int = DEFAULT_CAP, *, threads: int = 1, batch: int = BATCH,
                     backend=None) -> dict:
    """Compare ``E H(x + X)`` with ``H(x)`` at negative ``x`` by two independent estimates.

    ``H(x)`` comes from ``epochs`` fresh ladder walks from ``x``. For
    ``E H(x + X)`` each replicate draws one increment ``X``; when ``x + X >= 0``
    it contributes ``x + X`` and otherwise the overshoot of one ladder walk
    started at ``x + X``. The constant ``rho`` enters both sides identically
    and cancels from the difference.
    """
    xs = [float(x) for x in xs]
    if any(x >= 0 for x in xs):
        raise ValueError("the identity is only claimed for x < 0")
    rows = []
    for i, x in enumerate(xs):
        direct = overshoot_mean(dist, x, epochs, master_seed, cap, stream_offset=i * epochs,
                                threads=threads, batch=batch, backend=backend)
        nested = _nested_mean(dist, x, epochs, master_seed, cap, _OUTER_STREAM + i * epochs,
                              threads, batch, backend)
        se = math.hypot(direct.stderr, nested.stderr)
        dev = nested.mean - direct.mean
        rows.append({"x": x, "H_plus_rho": direct.mean, "EH_plus_rho": nested.mean,
                     "deviation": dev, "stderr": se, "z": dev / se if se > 0 else 0.0})
    worst = max(rows, key=lambda r: abs(r["z"]))
    return {"rows": rows, "max_abs_deviation": max(abs(r["deviation"]) for r in rows),
            "worst_z": worst["z"]}


def _nested_mean(dist, x, epochs, seed, cap, start, threads, batch, backend) -> McEstimate:
    def one(item):
        s0, count = item
        keys = rng.stream_keys(seed, start + s0, count)
        step = increments_np(dist.code, dist.code_params, keys, 0)
        y = x + step
        out = y.copy()
        below = y < 0
        if below.any():
            inner = rng.aux_key_np(rng.aux_key_np(keys[below]))
            if dist.kind == "centered-exponential":
                h = -np.log(rng.uniform_np(inner, 0))
                ok = np.ones(h.shape, bool)
            else:
                ep, h = ladder_batch(inner, y[below], cap, dist.code, dist.code_params, backend=backend)
                ok = ep >= 0
            vals = np.where(ok, h, np.nan)
            out[below] = vals
        good = np.isfinite(out)
        return out[good][:, None], int((~good).sum())

    acc = _Moments(1)
    capped = 0
    for vals, c in _map(one, _batches(epochs, batch), threads):
        acc.add(vals)
        capped += c
    _check_capped(capped, epochs, cap)
    return acc.estimates(seed)[0]


def renewal_measure(dist: IncrementDistribution, window: tuple[float, float], replicates: int,
                    master_seed: int, cap: int = DEFAULT_CAP, *, threads: int = 1, batch: int = BATCH,
                    backend=None) -> McEstimate:
    """``mu([lo, hi)) = sum_k P(V_k in [lo, hi))`` for the ladder-height renewal process ``V``.

    Each replicate runs consecutive ladder epochs until ``V`` passes ``hi``;
    ``V_0 = 0`` is counted.
    """
    lo, hi = map(float, window)
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo or lo < 0:
        raise ValueError("window must be a bounded interval of nonnegative reals")

    def one(item):
        s0, count = item
        keys = rng.stream_keys(master_seed, s0, count)
        counts, capped, epochs = renewal_batch(keys, lo, hi, cap, dist.code, dist.code_params, backend=backend)
        return counts[~capped].astype(float)[:, None], int(capped.sum()), int(epochs.sum())

    acc = _Moments(1)
    capped = total = 0
    for vals, c, e in _map(one, _batches(replicates, batch), threads):
        acc.add(vals)
        capped += c
        total += e
    # the threshold is on ladder epochs; a capped replicate is dropped whole
    _check_capped(capped, total, cap)
    return acc.estimates(master_seed)[0]


def renewal_measure_wald(dist: IncrementDistribution, c: float, epochs: int, master_seed: int,
                         constants: OvershootConstants, cap: int = DEFAULT_CAP, **kw) -> McEstimate:
    """``mu([0, c)) = E S_{T_{-c}} / E Y`` (Wald's identity), with a delta-method stderr."""
    if c <= 0:
        raise ValueError("c must be positive")
    m = overshoot_mean(dist, -c, epochs, master_seed, cap, stream_offset=_INNER_STREAM, **kw)
    num = m.mean + c
    ey = constants.EY
    # stderr of EY from the constants' second moment
    se_ey = math.sqrt(max(constants.EY2 - ey * ey, 0.0) / constants.epochs_used)
    val = num / ey
    se = abs(val) * math.hypot(m.stderr / num, se_ey / ey)
    return McEstimate(val, se, m.paths, master_seed)

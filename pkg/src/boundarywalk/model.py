"""Problem definitions: boundaries, payoffs and increment distributions.

All three are closed parametric families so that the derivatives the
expansion needs (b', f_x, f_t, f_xx) come from formulas rather than finite
differences. Instances are frozen and safe to share between workers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import rng
from ._accel import njit
from .errors import AssumptionViolation, ConfigError, OutOfRangeError

ArrayLike = float | np.ndarray


def content_hash(obj: Any) -> str:
    """sha256 of the canonical JSON encoding of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Boundary

BOUNDARY_KINDS = ("affine", "affine-plus-smooth-perturbation", "custom-polynomial")
BOUNDARY_CODES = {kind: code for code, kind in enumerate(BOUNDARY_KINDS)}


@dataclass(frozen=True)
class Boundary:
    """Crossing curve ``b(t)`` on ``t >= 0``.

    ``affine``: ``b0 + slope*t``.
    ``affine-plus-smooth-perturbation``: ``b0 + slope*t + amplitude*sin(frequency*t)``.
    ``custom-polynomial``: ``sum(c[i] t**i)`` on ``[0, t_join]``, continued
    linearly (C1) beyond ``t_join`` so the derivative stays bounded.
    """

    kind: str
    params: Mapping[str, Any]
    derivative_bound: float = field(init=False)
    b0: float = field(init=False)

    def __post_init__(self):
        if self.kind not in BOUNDARY_KINDS:
            raise ConfigError(f"unknown boundary kind {self.kind!r}", "boundary.kind")
        p = dict(self.params)
        if self.kind == "affine":
            p = {"b0": float(p["b0"]), "slope": float(p.get("slope", 0.0))}
            bound = abs(p["slope"])
        elif self.kind == "affine-plus-smooth-perturbation":
            p = {
                "b0": float(p["b0"]),
                "slope": float(p.get("slope", 0.0)),
                "amplitude": float(p.get("amplitude", 0.0)),
                "frequency": float(p.get("frequency", 1.0)),
            }
            bound = abs(p["slope"]) + abs(p["amplitude"] * p["frequency"])
        else:
            coeffs = [float(c) for c in p["coeffs"]]
            if not coeffs:
                raise ConfigError("need at least one coefficient", "boundary.params.coeffs")
            t_join = float(p.get("t_join", 1.0))
            if t_join <= 0:
                raise ConfigError("t_join must be positive", "boundary.params.t_join")
            p = {"coeffs": coeffs, "t_join": t_join}
            bound = _poly_abs_max(np.polynomial.polynomial.polyder(coeffs), 0.0, t_join)
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "derivative_bound", float(bound))
        b0 = float(self(0.0))
        object.__setattr__(self, "b0", b0)
        if not b0 > 0:
            raise AssumptionViolation(f"b(0) = {b0} must be positive", 3)

    @classmethod
    def affine(cls, b0: float, slope: float = 0.0) -> "Boundary":
        return cls("affine", {"b0": b0, "slope": slope})

    @classmethod
    def perturbed(cls, b0: float, slope: float, amplitude: float, frequency: float) -> "Boundary":
        return cls(
            "affine-plus-smooth-perturbation",
            {"b0": b0, "slope": slope, "amplitude": amplitude, "frequency": frequency},
        )

    @classmethod
    def polynomial(cls, coeffs, t_join: float) -> "Boundary":
        return cls("custom-polynomial", {"coeffs": list(coeffs), "t_join": t_join})

    # evaluation ----------------------------------------------------------
    def __call__(self, t: ArrayLike) -> ArrayLike:
        return boundary_eval_np(self.code, self.code_params, np.asarray(t, dtype=float))[()]

    def derivative(self, t: ArrayLike) -> ArrayLike:
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "affine":
            out = np.full_like(t, p["slope"])
        elif self.kind == "affine-plus-smooth-perturbation":
            out = p["slope"] + p["amplitude"] * p["frequency"] * np.cos(p["frequency"] * t)
        else:
            d = np.polynomial.polynomial.polyder(p["coeffs"])
            tj = p["t_join"]
            slope_join = np.polynomial.polynomial.polyval(tj, d) if len(d) else 0.0
            out = np.where(t <= tj, np.polynomial.polynomial.polyval(np.minimum(t, tj), d) if len(d) else 0.0, slope_join)
            out = np.asarray(out, dtype=float)
        return out[()]

    @property
    def code(self) -> int:
        return BOUNDARY_CODES[self.kind]

    @property
    def code_params(self) -> np.ndarray:
        """Flat parameter vector understood by :func:`boundary_eval`."""
        p = self.params
        if self.kind == "affine":
            return np.array([p["b0"], p["slope"]])
        if self.kind == "affine-plus-smooth-perturbation":
            return np.array([p["b0"], p["slope"], p["amplitude"], p["frequency"]])
        return np.array([p["t_join"], *p["coeffs"]])

    @property
    def asymptotic_slope(self) -> float:
        p = self.params
        if self.kind == "custom-polynomial":
            return float(self.derivative(p["t_join"]))
        return p["slope"]

    @property
    def crossing_epsilon(self) -> float | None:
        """An ``eps > 0`` with ``b(t) + eps*t -> -inf``, or None if there is none."""
        s = self.asymptotic_slope
        return -s / 2.0 if s < 0 else None

    @property
    def eventually_crosses(self) -> bool:
        return self.crossing_epsilon is not None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    def digest(self) -> str:
        return content_hash(self.to_dict())


def _poly_abs_max(coeffs, lo: float, hi: float) -> float:
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if coeffs.size == 0:
        return 0.0
    pts = [lo, hi]
    if coeffs.size > 2:
        for r in np.polynomial.polynomial.polyroots(np.polynomial.polynomial.polyder(coeffs)):
            if abs(r.imag) < 1e-12 and lo <= r.real <= hi:
                pts.append(r.real)
    return float(np.max(np.abs(np.polynomial.polynomial.polyval(np.array(pts), coeffs))))


def boundary_eval_np(code: int, params: np.ndarray, t: np.ndarray) -> np.ndarray:
    if code == 0:
        return params[0] + params[1] * t
    if code == 1:
        return params[0] + params[1] * t + params[2] * np.sin(params[3] * t)
    tj = params[0]
    c = params[1:]
    tc = np.minimum(t, tj)
    val = np.polynomial.polynomial.polyval(tc, c)
    d = np.polynomial.polynomial.polyder(c)
    slope = np.polynomial.polynomial.polyval(tj, d) if len(d) else 0.0
    return val + slope * np.maximum(t - tj, 0.0)


@njit
def boundary_eval(code, params, t):
    """Scalar boundary evaluation usable inside numba kernels."""
    if code == 0:
        return params[0] + params[1] * t
    if code == 1:
        return params[0] + params[1] * t + params[2] * np.sin(params[3] * t)
    tj = params[0]
    tc = t if t < tj else tj
    val = 0.0
    dval = 0.0
    for i in range(params.shape[0] - 1, 0, -1):
        dval = dval * tc + val
        val = val * tc + params[i]
    if t > tj:
        val += dval * (t - tj)
    return val


def boundary_level(boundary: Boundary, k, n: int):
    """Discrete crossing level ``sqrt(n) * b(k/n)`` at step ``k`` of the scale-``n`` walk."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.asarray(k)
    if np.any(k < 0):
        raise ValueError("k must be >= 0")
    return math.sqrt(n) * boundary(k / n)


# ---------------------------------------------------------------------------
# Payoff

PAYOFF_KINDS = ("time-exponential", "gaussian-bump", "windowed-polynomial")


@dataclass(frozen=True)
class Payoff:
    """Separable payoff ``f(t, x) = amplitude * exp(-rate*t) * X(x)``.

    ``time-exponential``: ``X = 1``.
    ``gaussian-bump``: ``X = exp(-(x-center)**2 / (2 width**2))``.
    ``windowed-polynomial``: ``X = P(x-center) * exp(-(x-center)**2 / (2 width**2))``.

    ``rate >= 0`` keeps ``f`` bounded on ``t >= 0``. The sup-norm bounds of
    ``f, f_x, f_t, f_xx`` are computed at construction.
    """

    kind: str
    params: Mapping[str, Any]
    bounds: Mapping[str, float] = field(init=False)

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise ConfigError(f"unknown payoff kind {self.kind!r}", "payoff.kind")
        p = dict(self.params)
        q = {"amplitude": float(p.get("amplitude", 1.0)), "rate": float(p.get("rate", 0.0))}
        if q["rate"] < 0:
            raise AssumptionViolation("payoff rate must be >= 0 for f to stay bounded", 4)
        if self.kind != "time-exponential":
            q["center"] = float(p.get("center", 0.0))
            q["width"] = float(p.get("width", 1.0))
            if q["width"] <= 0:
                raise ConfigError("width must be positive", "payoff.params.width")
        if self.kind == "windowed-polynomial":
            q["coeffs"] = [float(c) for c in p.get("coeffs", [1.0])]
        object.__setattr__(self, "params", q)
        object.__setattr__(self, "bounds", self._compute_bounds())

    @classmethod
    def time_exponential(cls, amplitude: float = 1.0, rate: float = 0.5) -> "Payoff":
        return cls("time-exponential", {"amplitude": amplitude, "rate": rate})

    @classmethod
    def constant(cls, c: float) -> "Payoff":
        return cls("time-exponential", {"amplitude": c, "rate": 0.0})

    @classmethod
    def gaussian_bump(cls, amplitude=1.0, rate=0.0, center=0.0, width=1.0) -> "Payoff":
        return cls("gaussian-bump", {"amplitude": amplitude, "rate": rate, "center": center, "width": width})

    @classmethod
    def windowed_polynomial(cls, coeffs, amplitude=1.0, rate=0.0, center=0.0, width=1.0) -> "Payoff":
        return cls(
            "windowed-polynomial",
            {"amplitude": amplitude, "rate": rate, "center": center, "width": width, "coeffs": list(coeffs)},
        )

    # spatial factor and its derivatives
    def _space(self, x, order: int):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.kind == "time-exponential":
            return np.ones_like(x) if order == 0 else np.zeros_like(x)
        z = x - p["center"]
        w2 = p["width"] ** 2
        g = np.exp(-0.5 * z * z / w2)
        if self.kind == "gaussian-bump":
            if order == 0:
                return g
            if order == 1:
                return -z / w2 * g
            return (z * z / (w2 * w2) - 1.0 / w2) * g
        c = p["coeffs"]
        P = np.polynomial.polynomial.polyval(z, c)
        if order == 0:
            return P * g
        d1 = np.polynomial.polynomial.polyder(c)
        P1 = np.polynomial.polynomial.polyval(z, d1) if len(d1) else np.zeros_like(z)
        if order == 1:
            return (P1 - z * P / w2) * g
        d2 = np.polynomial.polynomial.polyder(c, 2)
        P2 = np.polynomial.polynomial.polyval(z, d2) if len(d2) else np.zeros_like(z)
        return (P2 - (2 * z * P1 + P) / w2 + z * z * P / (w2 * w2)) * g

    def _time(self, t):
        p = self.params
        return p["amplitude"] * np.exp(-p["rate"] * np.asarray(t, dtype=float))

    def __call__(self, t, x):
        return (self._time(t) * self._space(x, 0))[()]

    def f_x(self, t, x):
        return (self._time(t) * self._space(x, 1))[()]

    def f_xx(self, t, x):
        return (self._time(t) * self._space(x, 2))[()]

    def f_t(self, t, x):
        return (-self.params["rate"] * self._time(t) * self._space(x, 0))[()]

    @property
    def is_constant(self) -> bool:
        return self.kind == "time-exponential" and self.params["rate"] == 0.0

    def boundary_data(self, boundary: Boundary) -> Callable[[np.ndarray], np.ndarray]:
        """``t -> f(t, b(t))``, the Dirichlet data for the value function."""
        return lambda t: np.asarray(self(t, boundary(t)), dtype=float)

    def _compute_bounds(self) -> dict:
        amp = abs(self.params["amplitude"])
        if self.kind == "time-exponential":
            sup = [1.0, 0.0, 0.0]
        else:
            w = self.params["width"]
            xs = self.params["center"] + np.linspace(-60 * w, 60 * w, 240001)
            sup = [float(np.max(np.abs(self._space(xs, k)))) for k in range(3)]
            sup = [s * 1.001 for s in sup]
        return {
            "f": amp * sup[0],
            "f_x": amp * sup[1],
            "f_t": amp * self.params["rate"] * sup[0],
            "f_xx": amp * sup[2],
        }

    def check_bounds(self, t, x) -> None:
        """Raise if ``f`` or a partial exceeds its declared bound at the given points."""
        checks = {
            "f": self(t, x),
            "f_x": self.f_x(t, x),
            "f_t": self.f_t(t, x),
            "f_xx": self.f_xx(t, x),
        }
        for name, vals in checks.items():
            if np.max(np.abs(vals)) > self.bounds[name] * (1 + 1e-12) + 1e-300:
                raise AssumptionViolation(f"|{name}| exceeds its declared bound {self.bounds[name]}", 4)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    def digest(self) -> str:
        return content_hash(self.to_dict())


# ---------------------------------------------------------------------------
# Increment distributions

DIST_KINDS = (
    "standard-normal",
    "centered-exponential",
    "uniform-symmetric",
    "gaussian-mixture",
    "two-point",
    "constant",
)
DIST_CODES = {kind: code for code, kind in enumerate(DIST_KINDS)}
NORMAL, CEXP, UNIFORM, MIXTURE, TWOPOINT, CONSTANT = range(6)


@dataclass(frozen=True)
class IncrementDistribution:
    """Law of the walk increments.

    The first four kinds satisfy ``EX = 0``, ``EX^2 = 1``. ``two-point`` (+-1)
    is lattice and exists to exercise the refusal path. ``constant`` is a
    deterministic stub for hand-checkable simulations; it is neither centred
    nor usable by the expansion.
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DIST_KINDS:
            raise ConfigError(f"unknown distribution kind {self.kind!r}", "distribution.kind")
        p = dict(self.params)
        if self.kind == "gaussian-mixture":
            p = {
                "weight": float(p.get("weight", 0.5)),
                "means": [float(m) for m in p.get("means", [-1.0, 1.0])],
                "sds": [float(s) for s in p.get("sds", [1.0, 1.0])],
            }
            if not 0 < p["weight"] < 1 or len(p["means"]) != 2 or len(p["sds"]) != 2:
                raise ConfigError("mixture needs weight in (0,1) and two means/sds", "distribution.params")
            if min(p["sds"]) <= 0:
                raise ConfigError("mixture sds must be positive", "distribution.params.sds")
        elif self.kind == "constant":
            p = {"value": float(p.get("value", 1.0))}
        else:
            p = {}
        object.__setattr__(self, "params", p)

    @property
    def code(self) -> int:
        return DIST_CODES[self.kind]

    @property
    def non_lattice(self) -> bool:
        return self.kind not in ("two-point", "constant")

    @property
    def is_stub(self) -> bool:
        return self.kind == "constant"

    def _mixture_standardisation(self):
        p = self.params
        w = np.array([p["weight"], 1 - p["weight"]])
        mu = np.array(p["means"])
        sd = np.array(p["sds"])
        m = float(w @ mu)
        v = float(w @ (sd**2 + mu**2) - m * m)
        return w, mu, sd, m, v

    @property
    def code_params(self) -> np.ndarray:
        if self.kind == "gaussian-mixture":
            w, mu, sd, m, v = self._mixture_standardisation()
            s = math.sqrt(v)
            return np.array([w[0], (mu[0] - m) / s, sd[0] / s, (mu[1] - m) / s, sd[1] / s])
        if self.kind == "constant":
            return np.array([self.params["value"]])
        return np.zeros(1)

    def moments(self) -> dict:
        return moments(self)

    def sample(self, size: int, seed: int, stream: int = 0) -> np.ndarray:
        """``size`` draws of stream ``stream`` (the same numbers the walk kernels use)."""
        key = rng.stream_keys(seed, stream, 1)[0]
        keys = np.full(size, key, dtype=np.uint64)
        return increments_np(self.code, self.code_params, keys, np.arange(size))

    def require_non_lattice(self) -> None:
        if not self.non_lattice:
            raise AssumptionViolation(
                f"{self.kind} increments are lattice; the expansion needs a strongly non-lattice law", 1
            )

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    def digest(self) -> str:
        return content_hash(self.to_dict())


def moments(dist: IncrementDistribution) -> dict:
    """Exact third and fourth moments ``{"m3": EX^3, "m4": EX^4}``."""
    k = dist.kind
    if k == "standard-normal":
        return {"m3": 0.0, "m4": 3.0}
    if k == "centered-exponential":
        return {"m3": 2.0, "m4": 9.0}
    if k == "uniform-symmetric":
        return {"m3": 0.0, "m4": 9.0 / 5.0}
    if k == "two-point":
        return {"m3": 0.0, "m4": 1.0}
    if k == "constant":
        c = dist.params["value"]
        return {"m3": c**3, "m4": c**4}
    w, mu, sd, m, v = dist._mixture_standardisation()
    d = mu - m
    m3 = float(w @ (d**3 + 3 * d * sd**2))
    m4 = float(w @ (d**4 + 6 * d * d * sd**2 + 3 * sd**4))
    return {"m3": m3 / v**1.5, "m4": m4 / v**2}


@njit
def increment(code, params, key, akey, i):
    """Increment ``i`` of the path with stream ``key`` (companion stream ``akey``)."""
    if code == 0:
        return rng.normal_at(key, i)
    if code == 1:
        return -np.log(rng.uniform(key, i)) - 1.0
    if code == 2:
        return 1.7320508075688772 * (2.0 * rng.uniform(key, i) - 1.0)
    if code == 3:
        z = rng.normal_at(key, i)
        if rng.uniform(akey, i) < params[0]:
            return params[1] + params[2] * z
        return params[3] + params[4] * z
    if code == 4:
        return 1.0 if rng.uniform(key, i) < 0.5 else -1.0
    return params[0]


def increments_np(code: int, params: np.ndarray, keys: np.ndarray, i) -> np.ndarray:
    """Vectorised :func:`increment`; ``i`` is a scalar or an array matching ``keys``."""
    if code == 0:
        return rng.normal_np(keys, i)
    if code == 1:
        return -np.log(rng.uniform_np(keys, i)) - 1.0
    if code == 2:
        return 1.7320508075688772 * (2.0 * rng.uniform_np(keys, i) - 1.0)
    if code == 3:
        z = rng.normal_np(keys, i)
        pick = rng.uniform_np(rng.aux_key_np(keys), i) < params[0]
        return np.where(pick, params[1] + params[2] * z, params[3] + params[4] * z)
    if code == 4:
        return np.where(rng.uniform_np(keys, i) < 0.5, 1.0, -1.0)
    return np.full(np.broadcast(keys, np.asarray(i)).shape, params[0])


# ---------------------------------------------------------------------------
# Delta trace and the payoff split


class DeltaTrace:
    """Sampled ``Delta(t)`` with monotone-cubic (PCHIP) interpolation between nodes."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape or self.times.size < 2:
            raise ValueError("times and values must be 1-D arrays of equal length >= 2")
        # roundoff-sized slopes overflow PCHIP's harmonic mean; the limit (slope 0) is what we want
        with np.errstate(over="ignore", divide="ignore"):
            self._interp = PchipInterpolator(self.times, self.values, extrapolate=False)
        span = self.times[-1] - self.times[0]
        self._slack = 1e-12 * max(span, 1.0)

    @classmethod
    def zero(cls, t_max: float) -> "DeltaTrace":
        return cls([0.0, t_max], [0.0, 0.0])

    @property
    def window(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.window
        if np.any(t < lo - self._slack) or np.any(t > hi + self._slack):
            raise OutOfRangeError(f"Delta trace defined on [{lo}, {hi}] only")
        return self._interp(np.clip(t, lo, hi))[()]

    def digest(self) -> str:
        h = hashlib.sha256(self.times.tobytes() + self.values.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SplitPayoff:
    """``f = f0 + f1`` with ``f1(t, x) = Delta(t) (x - b(t))``."""

    payoff: Payoff
    boundary: Boundary
    delta: DeltaTrace

    def f1(self, t, x):
        return (self.delta(t) * (np.asarray(x) - self.boundary(t)))[()]

    def f0(self, t, x):
        return (np.asarray(self.payoff(t, x)) - self.f1(t, x))[()]

    def f0_x(self, t, x):
        return (np.asarray(self.payoff.f_x(t, x)) - self.delta(t))[()]


def split_payoff(payoff: Payoff, boundary: Boundary, delta: DeltaTrace) -> SplitPayoff:
    return SplitPayoff(payoff, boundary, delta)


# ---------------------------------------------------------------------------
# JSON configuration


def _block(d: Mapping, key: str) -> Mapping:
    if key not in d or not isinstance(d[key], Mapping):
        raise ConfigError("missing or not an object", key)
    blk = d[key]
    if "kind" not in blk:
        raise ConfigError("missing", f"{key}.kind")
    if "params" in blk and not isinstance(blk["params"], Mapping):
        raise ConfigError("must be an object", f"{key}.params")
    return blk


def _build(cls, d: Mapping, key: str):
    blk = _block(d, key)
    try:
        return cls(blk["kind"], dict(blk.get("params", {})))
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.path or key) from None
    except KeyError as exc:
        raise ConfigError("missing", f"{key}.params.{exc.args[0]}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), f"{key}.params") from None


@dataclass(frozen=True)
class Problem:
    boundary: Boundary
    payoff: Payoff
    distribution: IncrementDistribution

    @classmethod
    def from_dict(cls, d: Mapping) -> "Problem":
        return cls(
            _build(Boundary, d, "boundary"),
            _build(Payoff, d, "payoff"),
            _build(IncrementDistribution, d, "distribution"),
        )

    def to_dict(self) -> dict:
        return {
            "boundary": self.boundary.to_dict(),
            "payoff": self.payoff.to_dict(),
            "distribution": self.distribution.to_dict(),
        }

    def digest(self) -> str:
        return content_hash(self.to_dict())


def standard_problem(distribution: str = "centered-exponential") -> Problem:
    """``b(t) = 1 - t/2``, ``f(t, x) = exp(-t/2)``: the running example."""
    return Problem(Boundary.affine(1.0, -0.5), Payoff.time_exponential(1.0, 0.5), IncrementDistribution(distribution))

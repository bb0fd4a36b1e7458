"""Backward heat-equation solves on the moving domain ``{x < b(t)}``.

In the boundary-fitted coordinate ``y = b(t) - x >= 0`` the value
``v(t, y) = u(t, b(t) - y)`` solves

    v_t + b'(t) v_y + 0.5 v_yy + q = 0,     v(t, 0) = data(t),

so the boundary sits on a fixed grid line. Rows of a :class:`Field` are time
nodes ``0, dt, ..., t_max`` and columns are ``y = 0, h, ..., y_max``.
Spatial derivatives of ``u`` follow from ``u_x = -v_y``, ``u_xx = v_yy``,
``u_xxx = -v_yyy``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .errors import ConfigError, NumericalRefusal, OutOfRangeError
from .kernels.cn import CONSTANT, NEUMANN, cn_solve
from .model import Boundary, DeltaTrace, Payoff, content_hash

FAR_FIELDS = {"neumann-zero": NEUMANN, "constant-extension": CONSTANT}


class GridWarning(UserWarning):
    """The grid is coarse enough that central differencing may oscillate."""


@dataclass(frozen=True)
class GridConfig:
    """Space-time grid in boundary-fitted coordinates.

    ``ny`` and ``nt`` count nodes including both ends, so
    ``h = y_max / (ny - 1)`` and ``dt = t_max / (nt - 1)``.
    ``truncation_tol`` bounds the bias from stopping the clock at ``t_max``.
    """

    y_max: float = 8.0
    t_max: float = 12.0
    ny: int = 512
    nt: int = 1024
    far_field: str = "neumann-zero"
    truncation_tol: float = 1e-4

    def __post_init__(self):
        if not self.y_max > 0:
            raise ConfigError("must be positive", "grid.y_max")
        if not self.t_max > 0:
            raise ConfigError("must be positive", "grid.t_max")
        if int(self.ny) < 16:
            raise ConfigError("must be >= 16", "grid.ny")
        if int(self.nt) < 16:
            raise ConfigError("must be >= 16", "grid.nt")
        if self.far_field not in FAR_FIELDS:
            raise ConfigError(f"must be one of {sorted(FAR_FIELDS)}", "grid.far_field")
        if not self.truncation_tol > 0:
            raise ConfigError("must be positive", "grid.truncation_tol")

    @property
    def h(self) -> float:
        return self.y_max / (self.ny - 1)

    @property
    def dt(self) -> float:
        return self.t_max / (self.nt - 1)

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.nt)

    def ys(self) -> np.ndarray:
        return np.linspace(0.0, self.y_max, self.ny)

    def refined(self) -> "GridConfig":
        """Halve both steps; the old nodes stay nodes of the new grid."""
        return GridConfig(self.y_max, self.t_max, 2 * self.ny - 1, 2 * self.nt - 1,
                          self.far_field, self.truncation_tol)

    def to_dict(self) -> dict:
        return {
            "y_max": float(self.y_max), "t_max": float(self.t_max), "ny": int(self.ny),
            "nt": int(self.nt), "far_field": self.far_field, "truncation_tol": float(self.truncation_tol),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridConfig":
        known = {"y_max", "t_max", "ny", "nt", "far_field", "truncation_tol"}
        extra = set(d) - known
        if extra:
            raise ConfigError("unknown key", f"grid.{sorted(extra)[0]}")
        kw = {k: d[k] for k in known if k in d}
        for k in ("ny", "nt"):
            if k in kw:
                v = kw[k]
                if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
                    raise ConfigError("must be an integer", f"grid.{k}")
                kw[k] = int(v)
        for k in ("y_max", "t_max", "truncation_tol"):
            if k in kw:
                if isinstance(kw[k], bool) or not isinstance(kw[k], (int, float)):
                    raise ConfigError("must be a number", f"grid.{k}")
                kw[k] = float(kw[k])
        if "far_field" in kw and kw["far_field"] not in FAR_FIELDS:
            raise ConfigError(f"must be one of {sorted(FAR_FIELDS)}", "grid.far_field")
        try:
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "grid") from None


@dataclass(frozen=True, eq=False)
class Field:
    """A solved grid function ``v(t_m, y_j)`` together with its provenance."""

    values: np.ndarray
    grid: GridConfig
    boundary: Boundary
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.nt, self.grid.ny):
            raise ValueError(f"values shape {v.shape} does not match grid {(self.grid.nt, self.grid.ny)}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times()

    @property
    def ys(self) -> np.ndarray:
        return self.grid.ys()

    def at(self, t, y):
        """Value at boundary-fitted coordinates: linear in ``t``, cubic Lagrange in ``y``."""
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        g = self.grid
        if np.any(y < -1e-12) or np.any(y > g.y_max + 1e-12) or np.any(t < -1e-12) or np.any(t > g.t_max + 1e-12):
            raise OutOfRangeError("point outside the solved domain")
        t, y = np.broadcast_arrays(t, y)
        ft = np.clip(t / g.dt, 0.0, g.nt - 1)
        i = np.minimum(ft.astype(np.int64), g.nt - 2)
        a = ft - i
        rows = (1 - a)[..., None] * _cubic_rows(self.values, i, y, g.h) \
            + a[..., None] * _cubic_rows(self.values, i + 1, y, g.h)
        return rows[..., 0][()]

    def value_at(self, t, x):
        """``u(t, x)`` for points on or below the boundary."""
        t = np.asarray(t, dtype=float)
        return self.at(t, self.boundary(t) - np.asarray(x, dtype=float))

    @property
    def origin(self) -> float:
        """``u(0, 0)``."""
        return float(self.value_at(0.0, 0.0))

    def digest(self) -> str:
        import hashlib
        h = hashlib.sha256(np.ascontiguousarray(self.values).tobytes())
        h.update(json.dumps(self.header(), sort_keys=True, default=str).encode())
        return h.hexdigest()

    def header(self) -> dict:
        return {"grid": self.grid.to_dict(), "boundary": self.boundary.to_dict(), "metadata": dict(self.metadata)}


def _cubic_rows(values, i, y, h):
    # 4-point Lagrange interpolation along y at time rows i (vectorised)
    ny = values.shape[1]
    fy = np.clip(y / h, 0.0, ny - 1)
    j = np.clip(np.floor(fy).astype(np.int64) - 1, 0, ny - 4)
    s = fy - j
    out = np.zeros(np.shape(y))
    for k in range(4):
        w = np.ones_like(s)
        for m in range(4):
            if m != k:
                w = w * (s - m) / (k - m)
        out = out + w * values[i, j + k]
    return out[..., None]


# ---------------------------------------------------------------------------
# solves


def _sample(data: Callable, t: np.ndarray) -> np.ndarray:
    out = np.broadcast_to(np.asarray(data(t), dtype=float), t.shape).copy()
    if not np.all(np.isfinite(out)):
        raise NumericalRefusal("boundary data is not finite on the time grid")
    return out


def _check_peclet(boundary: Boundary, grid: GridConfig) -> float:
    pe = boundary.derivative_bound * grid.h
    if pe > 1.0:
        warnings.warn(
            f"cell Peclet number |b'| h = {pe:.3g} > 1; central differencing may oscillate",
            GridWarning, stacklevel=3,
        )
    return pe


def survival_probability(boundary: Boundary, grid: GridConfig, backend=None) -> float:
    """``P(tau0 > t_max)`` for Brownian motion from the origin, by a PDE solve.

    Boundary data 0 and terminal data 1; the corner discontinuity is damped
    by the implicit start-up steps.
    """
    far = FAR_FIELDS[grid.far_field]
    v = cn_solve(boundary.derivative(grid.times()) + np.zeros(grid.nt), np.zeros(grid.nt),
                 np.ones(grid.ny), grid.dt, grid.h, far=far, startup=4, backend=backend)
    f = Field(v, grid, boundary)
    return float(np.clip(f.origin, 0.0, 1.0))


def _tail_oscillation(data: Callable, t_max: float) -> tuple[float, str]:
    ts = np.linspace(t_max, 4.0 * t_max, 2001)
    try:
        vals = np.asarray(data(ts), dtype=float)
    except OutOfRangeError:
        # data known only up to t_max (a sampled trace): assume the tail stays
        # between 0 and its last value, doubled for slack
        last = float(np.asarray(data(np.array([t_max])), dtype=float)[0])
        return 2.0 * abs(last), "proxy"
    return float(np.max(np.abs(vals - vals[0]))), "sampled"


def solve_value(boundary: Boundary, boundary_data: Callable, grid: GridConfig, *,
                kind: str = "u", data_hash: str | None = None, check_truncation: bool = True,
                startup: int = 2, backend=None) -> Field:
    """Solve for ``u(t, x) = E data(tau(t, x))`` below the boundary.

    Parameters
    ----------
    boundary : Boundary
    boundary_data : callable
        ``t -> data(t)``, vectorised. For the value function this is
        ``f(t, b(t))``.
    grid : GridConfig
    kind : str
        Label stored in the metadata (``"u"`` or ``"g"``).
    data_hash : str, optional
        Provenance hash of whatever generated ``boundary_data``.
    check_truncation : bool
        Refuse when the horizon cut-off could move ``u(0, 0)`` by more than
        ``grid.truncation_tol``.

    Returns
    -------
    Field
        Terminal row is the constant extension ``data(t_max)``.

    Raises
    ------
    NumericalRefusal
        If the truncation bias bound ``P(tau0 > t_max) * osc`` reaches the
        tolerance, where ``osc`` is the oscillation of the data after
        ``t_max``.
    """
    times = grid.times()
    data = _sample(boundary_data, times)
    pe = _check_peclet(boundary, grid)
    far = FAR_FIELDS[grid.far_field]
    p_tail = survival_probability(boundary, grid, backend=backend)
    osc, osc_kind = _tail_oscillation(boundary_data, grid.t_max)
    sup = float(np.max(np.abs(data)))
    bias = p_tail * osc
    if check_truncation and bias >= grid.truncation_tol:
        raise NumericalRefusal(
            f"horizon t_max={grid.t_max} too short: P(tau0 > t_max) ~ {p_tail:.3g}, "
            f"truncation bias bound {bias:.3g} >= tolerance {grid.truncation_tol:g}"
        )
    drift = np.asarray(boundary.derivative(times), dtype=float) + np.zeros(grid.nt)
    v = cn_solve(drift, data, np.full(grid.ny, data[-1]), grid.dt, grid.h, far=far,
                 startup=startup, backend=backend)
    meta = {
        "kind": kind,
        "data_hash": data_hash,
        "solver": {"scheme": "crank-nicolson", "startup_implicit_steps": startup, "far_field": grid.far_field},
        "truncation": {
            "p_tail": p_tail,
            "sup_data_times_p_tail": sup * p_tail,
            "tail_oscillation": osc,
            "tail_oscillation_kind": osc_kind,
            "bias_bound": bias,
            "tolerance": grid.truncation_tol,
        },
        "peclet": pe,
    }
    meta.update(derivative_maxima(v, grid))
    return Field(v, grid, boundary, meta)


def solve_running_cost(boundary: Boundary, source: np.ndarray | Field, grid: GridConfig, *,
                       source_hash: str | None = None, startup: int = 2, backend=None) -> Field:
    """Solve ``w_t + 0.5 w_xx + q = 0`` with ``w = 0`` on the boundary and at ``t_max``.

    ``source`` holds ``q`` on the nodes of ``grid`` (an array or a Field
    sharing the grid); mismatched grids are refused rather than interpolated.
    """
    if isinstance(source, Field):
        if source.grid != grid:
            raise ValueError("source field lives on a different grid")
        q = source.values
    else:
        q = np.asarray(source, dtype=float)
    if q.shape != (grid.nt, grid.ny):
        raise ValueError(f"source shape {q.shape} does not match grid {(grid.nt, grid.ny)}")
    times = grid.times()
    _check_peclet(boundary, grid)
    drift = np.asarray(boundary.derivative(times), dtype=float) + np.zeros(grid.nt)
    v = cn_solve(drift, np.zeros(grid.nt), np.zeros(grid.ny), grid.dt, grid.h,
                 far=FAR_FIELDS[grid.far_field], source=q, startup=startup, backend=backend)
    meta = {
        "kind": "w",
        "source_hash": source_hash,
        "solver": {"scheme": "crank-nicolson", "startup_implicit_steps": startup, "far_field": grid.far_field},
        "truncation": {"p_tail": survival_probability(boundary, grid, backend=backend),
                       "sup_source": float(np.max(np.abs(q)))},
    }
    return Field(v, grid, boundary, meta)


# ---------------------------------------------------------------------------
# derivatives


def boundary_gradient(field: Field) -> np.ndarray:
    """``u_x(t_m, b(t_m)-)`` per time node, from the one-sided 3-point stencil."""
    v = field.values
    if v.shape[1] < 3:
        raise ValueError("need at least 3 space nodes")
    vy = (-3.0 * v[:, 0] + 4.0 * v[:, 1] - v[:, 2]) / (2.0 * field.grid.h)
    return -vy


def _third_y(v: np.ndarray, h: float) -> np.ndarray:
    n = v.shape[-1]
    if n < 5:
        raise ValueError("need at least 5 space nodes")
    out = np.empty_like(v)
    out[..., 2:-2] = (v[..., 4:] - 2.0 * v[..., 3:-1] + 2.0 * v[..., 1:-3] - v[..., :-4]) / (2.0 * h**3)
    fwd = np.array([-5.0, 18.0, -24.0, 14.0, -3.0]) / (2.0 * h**3)
    for j in (0, 1):
        out[..., j] = v[..., j:j + 5] @ fwd
    for j in (n - 2, n - 1):
        out[..., j] = -(v[..., j - 4:j + 1][..., ::-1] @ fwd)
    return out


def third_derivative(field: Field) -> np.ndarray:
    """``u_xxx = -v_yyy`` on every node: centred 5-point stencil inside, 2nd-order one-sided at the edges."""
    return -_third_y(field.values, field.grid.h)


def derivative_maxima(v: np.ndarray, grid: GridConfig) -> dict:
    """Empirical sup-norms of ``u``'s derivatives and a noise flag for ``u_xxx``.

    The flag is raised when ``max|u_xxxx| h**2`` is not small next to
    ``max|u_xxx|``, i.e. when the stencil error could swamp the signal.
    """
    h, dt = grid.h, grid.dt
    u_x = np.abs(np.diff(v, axis=1)).max() / h
    u3 = np.abs(_third_y(v, h)[:, 2:-2]).max()
    d4 = v[:, 4:] - 4 * v[:, 3:-1] + 6 * v[:, 2:-2] - 4 * v[:, 1:-3] + v[:, :-4]
    u4 = np.abs(d4).max() / h**4
    u_t = np.abs(np.diff(v, axis=0)).max() / dt
    u_tt = np.abs(v[2:] - 2 * v[1:-1] + v[:-2]).max() / dt**2 if v.shape[0] > 2 else 0.0
    noisy = bool(u4 * h * h > 0.1 * u3) if u3 > 0 else False
    return {
        "derivative_maxima": {"u_x": float(u_x), "u_xxx": float(u3), "u_xxxx": float(u4),
                              "u_t": float(u_t), "u_tt": float(u_tt)},
        "u_xxx_noise_flag": noisy,
    }


def compute_delta(u_field: Field, payoff: Payoff) -> DeltaTrace:
    """``Delta(t) = f_x(t, b(t)) - u_x(t, b(t)-)`` on the field's time nodes."""
    t = u_field.times
    fx = np.asarray(payoff.f_x(t, u_field.boundary(t)), dtype=float) + np.zeros_like(t)
    return DeltaTrace(t, fx - boundary_gradient(u_field))


def richardson(coarse: np.ndarray, fine: np.ndarray, order: int = 2) -> np.ndarray:
    """Combine a grid function with its ``refined()`` counterpart on the coarse nodes."""
    fine = np.asarray(fine)
    sub = fine[(slice(None, None, 2),) * fine.ndim]
    if sub.shape != coarse.shape:
        raise ValueError("fine grid is not the refinement of the coarse grid")
    r = 2.0**order
    return (r * sub - coarse) / (r - 1.0)


# ---------------------------------------------------------------------------
# cache


def cache_key(obj: Any) -> str:
    return content_hash(obj)


def save_field(field: Field, directory: str | Path, key: str) -> Path:
    """Write ``<key>.bin`` (little-endian float64, time-major) and ``<key>.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"{key}.bin"
    np.ascontiguousarray(field.values, dtype="<f8").tofile(path)
    header = field.header()
    header["key"] = key
    header["dtype"] = "<f8"
    header["shape"] = list(field.values.shape)
    (d / f"{key}.json").write_text(json.dumps(header, sort_keys=True, indent=1, default=_json_default))
    return path


def load_field(directory: str | Path, key: str) -> Field | None:
    d = Path(directory)
    bin_path, json_path = d / f"{key}.bin", d / f"{key}.json"
    if not (bin_path.exists() and json_path.exists()):
        return None
    header = json.loads(json_path.read_text())
    values = np.fromfile(bin_path, dtype="<f8").reshape(header["shape"])
    grid = GridConfig(**header["grid"])
    b = header["boundary"]
    return Field(values, grid, Boundary(b["kind"], b["params"]), header["metadata"])


def cached(directory: str | Path | None, key_obj: Any, solve: Callable[[], Field]) -> Field:
    """Return the cached field for ``key_obj`` or solve and store it."""
    if directory is None:
        return solve()
    key = cache_key(key_obj)
    hit = load_field(directory, key)
    if hit is not None:
        return hit
    f = solve()
    save_field(f, directory, key)
    return f


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(type(o))

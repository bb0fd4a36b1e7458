"""Experiment configuration: one JSON document, validated with key paths."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .model import Problem, content_hash
from .pde import GridConfig
from .walk import BATCH

FORMATS = ("csv", "json")
SCALES = ("full", "quick")


def _expect(d: Mapping, key: str, kinds, path: str, required: bool = True, default=None):
    if key not in d:
        if required:
            raise ConfigError("missing", f"{path}.{key}" if path else key)
        return default
    v = d[key]
    if kinds is int and isinstance(v, bool) or not isinstance(v, kinds):
        names = kinds.__name__ if isinstance(kinds, type) else "/".join(k.__name__ for k in kinds)
        raise ConfigError(f"expected {names}, got {type(v).__name__}", f"{path}.{key}" if path else key)
    return v


def _no_extra(d: Mapping, allowed, path: str) -> None:
    for k in d:
        if k not in allowed:
            raise ConfigError("unknown key", f"{path}.{k}" if path else k)


def _object(d: Mapping, key: str, path: str = "", required: bool = True) -> Mapping:
    blk = _expect(d, key, dict, path, required, {})
    return blk


def _positive(v, path: str):
    if v <= 0:
        raise ConfigError("must be positive", path)
    return v


@dataclass(frozen=True)
class McConfig:
    paths: int
    master_seed: int
    batch: int = BATCH
    n: int | None = None


@dataclass(frozen=True)
class FluctuationConfig:
    epochs: int = 10**6
    cap: int = 10**10
    exact_shortcut: bool = False


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple = FORMATS


@dataclass(frozen=True)
class AcceptanceConfig:
    scale: str = "full"
    criteria: tuple = tuple(range(1, 10))


@dataclass(frozen=True)
class ExperimentConfig:
    problem: Problem
    grid: GridConfig
    mc: McConfig
    fluctuation: FluctuationConfig = FluctuationConfig()
    n_list: tuple = ()
    outputs: OutputConfig = OutputConfig()
    acceptance: AcceptanceConfig = AcceptanceConfig()
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_dict(cls, d: Any) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        _no_extra(d, ("problem", "grid", "mc", "fluctuation", "n_list", "outputs", "acceptance"), "")

        prob = _object(d, "problem")
        _no_extra(prob, ("boundary", "payoff", "distribution"), "problem")
        try:
            problem = Problem.from_dict(prob)
        except ConfigError as exc:
            raise ConfigError(str(exc).split(": ", 1)[-1], f"problem.{exc.path}") from None

        try:
            grid = GridConfig.from_dict(d.get("grid", {}))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "grid") from None

        mc_d = _object(d, "mc")
        _no_extra(mc_d, ("paths", "master_seed", "batch", "n"), "mc")
        seed = _expect(mc_d, "master_seed", int, "mc")
        if seed < 0:
            raise ConfigError("must be nonnegative", "mc.master_seed")
        mc = McConfig(
            _positive(_expect(mc_d, "paths", int, "mc"), "mc.paths"),
            seed,
            _positive(_expect(mc_d, "batch", int, "mc", False, BATCH), "mc.batch"),
            _expect(mc_d, "n", int, "mc", False, None),
        )
        if mc.n is not None:
            _positive(mc.n, "mc.n")

        fl_d = _object(d, "fluctuation", required=False)
        _no_extra(fl_d, ("epochs", "cap", "exact_shortcut"), "fluctuation")
        fl = FluctuationConfig(
            _positive(_expect(fl_d, "epochs", int, "fluctuation", False, 10**6), "fluctuation.epochs"),
            _positive(_expect(fl_d, "cap", int, "fluctuation", False, 10**10), "fluctuation.cap"),
            _expect(fl_d, "exact_shortcut", bool, "fluctuation", False, False),
        )

        n_list = _expect(d, "n_list", list, "", False, [])
        for i, n in enumerate(n_list):
            if isinstance(n, bool) or not isinstance(n, int) or n <= 0:
                raise ConfigError("expected a positive integer", f"n_list[{i}]")
        if any(a >= b for a, b in zip(n_list, n_list[1:])):
            raise ConfigError("must be strictly increasing", "n_list")

        out_d = _object(d, "outputs", required=False)
        _no_extra(out_d, ("directory", "formats"), "outputs")
        formats = _expect(out_d, "formats", list, "outputs", False, list(FORMATS))
        for i, f in enumerate(formats):
            if f not in FORMATS:
                raise ConfigError(f"unknown format {f!r}", f"outputs.formats[{i}]")
        outputs = OutputConfig(_expect(out_d, "directory", str, "outputs", False, "out"), tuple(formats))

        acc_d = _object(d, "acceptance", required=False)
        _no_extra(acc_d, ("scale", "criteria"), "acceptance")
        scale = _expect(acc_d, "scale", str, "acceptance", False, "full")
        if scale not in SCALES:
            raise ConfigError(f"must be one of {SCALES}", "acceptance.scale")
        crit = _expect(acc_d, "criteria", list, "acceptance", False, list(range(1, 10)))
        for i, c in enumerate(crit):
            if isinstance(c, bool) or not isinstance(c, int) or not 1 <= c <= 9:
                raise ConfigError("expected a criterion number 1..9", f"acceptance.criteria[{i}]")
        acceptance = AcceptanceConfig(scale, tuple(crit))

        return cls(problem, grid, mc, fl, tuple(n_list), outputs, acceptance, raw=json.loads(json.dumps(d)))

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration: {exc.strerror}") from None
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(d)

    def digest(self) -> str:
        """Hash of the result-bearing parts (outputs are excluded)."""
        d = {k: v for k, v in self.raw.items() if k != "outputs"}
        return content_hash(d)


def standard_config(distribution: str = "centered-exponential", **overrides) -> dict:
    """The running example as a config document."""
    d = {
        "problem": {
            "boundary": {"kind": "affine", "params": {"b0": 1.0, "slope": -0.5}},
            "payoff": {"kind": "time-exponential", "params": {"amplitude": 1.0, "rate": 0.5}},
            "distribution": {"kind": distribution},
        },
        "grid": {"y_max": 10.0, "t_max": 24.0, "ny": 1024, "nt": 2048},
        "mc": {"paths": 100000, "master_seed": 20240601},
        "fluctuation": {"epochs": 1000000, "cap": 10**10},
        "n_list": [100, 400, 1600],
    }
    d.update(overrides)
    return d

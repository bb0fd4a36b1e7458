"""Command line entry point: ``boundarywalk <subcommand> --config cfg.json``.

Subcommands write their artifacts into the output directory (``--out``,
else ``$BOUNDARYWALK_OUT``, else ``outputs.directory`` from the config):

``solve``     cached fields under ``cache/`` and ``solve.json``
``simulate``  ``simulate.csv`` (and ``diagnostics.csv`` with ``--diagnostics``)
``rho``       ``rho.json``
``expand``    ``expansion.json`` / ``expansion.csv``
``rates``     ``rates.csv`` / ``rates.json``
``validate``  ``acceptance.csv`` / ``acceptance.json``

Exit codes: 0 success, 1 failed acceptance criteria or I/O trouble,
2 configuration error, 3 violated assumption, 4 numerical refusal.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

from . import __version__, acceptance, expansion, fluctuation, reporting, walk
from .config import ExperimentConfig
from .errors import BoundaryWalkError, ConfigError
from .model import content_hash

SUBCOMMANDS = ("solve", "simulate", "rho", "expand", "rates", "validate")
SIM_COLUMNS = ("n", "paths", "payoff_mean", "payoff_stderr", "tau_mean", "tau_stderr",
               "overshoot_mean", "overshoot_stderr", "corr_overshoot_tau")
DIAG_COLUMNS = ("n", "quantity", "d", "mean", "stderr")
EXPANSION_COLUMNS = ("n", "leading", "skew_term", "overshoot_term", "corrected")
ACCEPTANCE_COLUMNS = ("criterion", "title", "passed", "summary")


class _Run:
    def __init__(self, cfg: ExperimentConfig, out: Path, threads: int, diagnostics: bool,
                 echo: Callable[[str], None]):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.diagnostics = diagnostics
        self.echo = echo

    @property
    def cache(self) -> Path:
        return self.out / "cache"

    def provenance(self, subcommand: str, **extra) -> dict:
        return {"package": f"boundarywalk {__version__}", "subcommand": subcommand,
                "config_hash": self.cfg.digest(), "problem_hash": self.cfg.problem.digest(), **extra}

    def emit(self, stem: str, columns, rows, data, prov) -> None:
        fm = self.cfg.outputs.formats
        if "csv" in fm and columns is not None:
            reporting.write_csv(self.out / f"{stem}.csv", columns, rows, prov)
        if "json" in fm:
            reporting.write_json(self.out / f"{stem}.json", data, prov)

    def n_values(self) -> list[int]:
        if self.cfg.n_list:
            return list(self.cfg.n_list)
        if self.cfg.mc.n is not None:
            return [self.cfg.mc.n]
        raise ConfigError("simulate needs n_list or mc.n", "n_list")

    # subcommands -----------------------------------------------------------

    def solve(self) -> int:
        cfg = self.cfg
        expansion.preflight(cfg.problem.boundary, cfg.problem.distribution)
        u, delta, g, w = expansion.solve_fields(cfg.problem, cfg.grid, cache_dir=self.cache)
        data = {"u00": u.origin, "g00": g.origin, "w00": w.origin, "delta0": float(delta(0.0)),
                "truncation": u.metadata["truncation"], "peclet": u.metadata["peclet"],
                "u_xxx_noise_flag": u.metadata["u_xxx_noise_flag"]}
        prov = self.provenance("solve", u_hash=u.digest(), g_hash=g.digest(), w_hash=w.digest(),
                               delta_hash=delta.digest())
        reporting.write_json(self.out / "solve.json", data, prov)
        self.echo(f"u(0,0) = {u.origin:.12g}  g(0,0) = {g.origin:.12g}  w(0,0) = {w.origin:.12g}")
        return 0

    def simulate(self) -> int:
        cfg = self.cfg
        p = cfg.problem
        kw = {"threads": self.threads, "batch": cfg.mc.batch}
        rows, diag = [], []
        for n in self.n_values():
            j = walk.joint_overshoot_stats(n, p.distribution, p.boundary, cfg.mc.paths, cfg.mc.master_seed,
                                           payoff=p.payoff, **kw)
            rows.append({"n": n, "paths": j["paths"], "payoff_mean": j["payoff"].mean,
                         "payoff_stderr": j["payoff"].stderr, "tau_mean": j["mean_tau"].mean,
                         "tau_stderr": j["mean_tau"].stderr, "overshoot_mean": j["mean_R"].mean,
                         "overshoot_stderr": j["mean_R"].stderr, "corr_overshoot_tau": j["corr_R_tau"]})
            self.echo(f"n={n}: E f = {j['payoff'].mean:.6f} +- {j['payoff'].stderr:.2e}")
            if self.diagnostics:
                v = walk.visit_counts(n, p.distribution, p.boundary, cfg.mc.paths, cfg.mc.master_seed, **kw)
                for d, est in zip(v["d"], v["N_d"]):
                    diag.append({"n": n, "quantity": "N_d", "d": d, "mean": est.mean, "stderr": est.stderr})
                diag.append({"n": n, "quantity": "growth", "d": "", "mean": v["growth"].mean,
                             "stderr": v["growth"].stderr})
        prov = self.provenance("simulate", paths=cfg.mc.paths, master_seed=cfg.mc.master_seed)
        self.emit("simulate", SIM_COLUMNS, rows, rows, prov)
        if self.diagnostics:
            self.emit("diagnostics", DIAG_COLUMNS, diag, diag, prov)
        return 0

    def _estimate_constants(self) -> fluctuation.OvershootConstants:
        fl = self.cfg.fluctuation
        return fluctuation.estimate_rho(self.cfg.problem.distribution, fl.epochs, self.cfg.mc.master_seed,
                                        fl.cap, threads=self.threads, exact_shortcut=fl.exact_shortcut)

    def rho(self) -> int:
        c = self._estimate_constants()
        reporting.write_json(self.out / "rho.json", c.to_dict(),
                             self.provenance("rho", constants_hash=c.digest()))
        self.echo(f"rho = {c.rho:.6f} +- {c.rho_stderr:.1e} ({c.epochs_used} epochs, "
                  f"capped fraction {c.capped_fraction:.1e})")
        return 0

    def constants(self) -> fluctuation.OvershootConstants:
        """``rho.json`` from an earlier ``rho`` run when it matches this config, else a fresh estimate."""
        path = self.out / "rho.json"
        if path.exists():
            try:
                prov, _ = reporting.read_json(path)
                if prov.get("config_hash") == self.cfg.digest():
                    return fluctuation.OvershootConstants.load(path)
            except (ValueError, KeyError, TypeError):
                pass
        self.rho()
        return fluctuation.OvershootConstants.load(path)

    def _report(self) -> expansion.ExpansionReport:
        cfg = self.cfg
        expansion.preflight(cfg.problem.boundary, cfg.problem.distribution)
        return expansion.assemble(cfg.problem, cfg.grid, self.constants(), cache_dir=self.cache)

    def expand(self) -> int:
        rep = self._report()
        rows = [{"n": n, "leading": rep.leading, "skew_term": rep.skew_term,
                 "overshoot_term": rep.overshoot_term, "corrected": float(rep.corrected(n))}
                for n in self.cfg.n_list]
        data = {**rep.to_dict(), "corrected": rows}
        self.emit("expansion", EXPANSION_COLUMNS, rows, data, self.provenance("expand", **_hashes(rep)))
        self.echo(f"leading {rep.leading:.6f}  skew {rep.skew_term:+.6f}  overshoot {rep.overshoot_term:+.6f}")
        return 0

    def rates(self) -> int:
        cfg = self.cfg
        if len(cfg.n_list) < 3:
            raise ConfigError("rates needs at least 3 values", "n_list")
        rep = self._report()
        study = expansion.rate_study(cfg.problem, rep, cfg.n_list, cfg.mc.paths, cfg.mc.master_seed,
                                     threads=self.threads, batch=cfg.mc.batch)
        prov = self.provenance("rates", paths=cfg.mc.paths, master_seed=cfg.mc.master_seed, **_hashes(rep))
        self.emit("rates", expansion.RATE_COLUMNS, study["rows"],
                  {"rows": study["rows"], "trend": study["trend"], "report": rep.to_dict()}, prov)
        for r in study["rows"]:
            self.echo(f"n={r['n']}: sqrt(n)|mc-corrected| = {r['sqrt_n_abs_resid_corrected']:.4f}  "
                      f"sqrt(n)|mc-uncorrected| = {r['sqrt_n_abs_resid_uncorrected']:.4f}")
        self.echo(f"trend: kendall tau {study['trend']['kendall_tau']:.3f} ({study['trend']['status']})")
        return 0

    def validate(self) -> int:
        cfg = self.cfg
        acceptance.preflight_problem(cfg.problem)
        results = acceptance.run(cfg.acceptance.criteria, cfg.acceptance.scale, cfg.mc.master_seed,
                                 self.threads, echo=self.echo)
        rows = [{"criterion": r.number, "title": r.title, "passed": r.passed,
                 "summary": r.summary.replace(",", ";")} for r in results]
        data = [{"criterion": r.number, "passed": r.passed, "summary": r.summary, "details": r.details}
                for r in results]
        self.emit("acceptance", ACCEPTANCE_COLUMNS, rows, data,
                  self.provenance("validate", scale=cfg.acceptance.scale))
        passed = sum(r.passed for r in results)
        self.echo(f"{passed}/{len(results)} criteria passed")
        return 0 if passed == len(results) else 1


def _hashes(rep: expansion.ExpansionReport) -> dict:
    pv = rep.provenance
    return {"u_hash": pv["u_hash"], "g_hash": pv["g_hash"], "w_hash": pv["w_hash"],
            "constants_hash": pv["constants_hash"], "report_hash": content_hash(reporting.clean(rep.to_dict()))}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="boundarywalk",
                                 description="Corrected Brownian approximations for random walks crossing "
                                             "curved boundaries.")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="experiment configuration (JSON)")
    ap.add_argument("--out", help="output directory (overrides the config and $BOUNDARYWALK_OUT)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
    ap.add_argument("--diagnostics", action="store_true", help="also record near-boundary counters")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv: Sequence[str] | None = None, stdout: Callable[[str], None] | None = None) -> int:
    args = build_parser().parse_args(argv)
    echo = stdout or print
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = ExperimentConfig.load(args.config)
        out = Path(args.out or os.environ.get("BOUNDARYWALK_OUT") or cfg.outputs.directory)
        run = _Run(cfg, out, args.threads, args.diagnostics, echo)
        return getattr(run, args.subcommand)()
    except BoundaryWalkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

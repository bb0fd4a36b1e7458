"""The nine acceptance criteria, shared by the test suite and ``validate``.

Each criterion returns a :class:`CriterionResult` whose ``details`` hold the
numbers behind the verdict. Expensive shared inputs (value fields, overshoot
constants) are computed once per :class:`Suite`.
"""

from __future__ import annotations

import math
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, stats

from . import expansion, fluctuation, pde, walk
from .model import IncrementDistribution, Problem, split_payoff, standard_problem

DEFAULT_SEED = 20240601

SCALES = {
    "full": {
        "c2_normal_epochs": 10**7, "c2_exp_epochs": 10**6, "c3_epochs": 10**6,
        "c4_paths": 10**7, "c5_paths": 10**6, "c6_paths": 10**7, "c7_paths": 10**5,
        "c9_paths": 20000, "constants_epochs": 10**6,
    },
    "quick": {
        "c2_normal_epochs": 2 * 10**5, "c2_exp_epochs": 10**4, "c3_epochs": 2 * 10**4,
        "c4_paths": 2 * 10**4, "c5_paths": 2 * 10**4, "c6_paths": 2 * 10**4, "c7_paths": 5000,
        "c9_paths": 4000, "constants_epochs": 10**5,
    },
}

TITLES = {
    1: "closed-form leading term",
    2: "overshoot constants",
    3: "H-harmonicity",
    4: "corrected-approximation rate",
    5: "overshoot and Delta consistency",
    6: "convolution oracle vs Monte Carlo",
    7: "near-boundary diagnostics",
    8: "e_n diagnostic",
    9: "determinism across thread counts",
}

# grid used for every expansion-level field
EXPANSION_GRID = pde.GridConfig(y_max=10.0, t_max=24.0, ny=1024, nt=2048)
RHO_CAP = 10**10


@dataclass
class CriterionResult:
    number: int
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def title(self) -> str:
        return TITLES[self.number]

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number} {verdict} {self.title}: {self.summary} [{self.seconds:.1f}s]"


def leading_closed_form(b0: float = 1.0, slope: float = -0.5, rate: float = 0.5) -> float:
    """``E exp(-rate tau0)`` for Brownian passage to ``b0 + slope t``."""
    return math.exp(-b0 * (math.sqrt(slope * slope + 2 * rate) + slope))


def truncated_reference(t_max: float, b0: float = 1.0, slope: float = -0.5, rate: float = 0.5) -> float:
    """``E exp(-rate min(tau0, t_max))``: inverse Gaussian passage law with mean ``b0/|slope|``."""
    mean, shape = b0 / abs(slope), b0 * b0
    law = stats.invgauss(mean / shape, scale=shape)
    head = integrate.quad(lambda t: math.exp(-rate * t) * law.pdf(t), 0.0, t_max, limit=200,
                          epsabs=1e-14, epsrel=1e-13)[0]
    return head + math.exp(-rate * t_max) * law.sf(t_max)


class Suite:
    """Runs criteria with shared caches."""

    def __init__(self, scale: str = "full", seed: int = DEFAULT_SEED, threads: int = 1):
        if scale not in SCALES:
            raise ValueError(f"unknown scale {scale!r}")
        self.scale = scale
        self.sizes = SCALES[scale]
        self.seed = int(seed)
        self.threads = int(threads)
        self._constants: dict[str, fluctuation.OvershootConstants] = {}
        self._reports: dict[str, expansion.ExpansionReport] = {}

    # shared inputs ---------------------------------------------------------

    def constants(self, kind: str) -> fluctuation.OvershootConstants:
        if kind not in self._constants:
            dist = IncrementDistribution(kind)
            self._constants[kind] = fluctuation.estimate_rho(
                dist, self.sizes["constants_epochs"], self.seed + 2, RHO_CAP, threads=self.threads,
                exact_shortcut=True)
        return self._constants[kind]

    def report(self, kind: str) -> expansion.ExpansionReport:
        if kind not in self._reports:
            self._reports[kind] = expansion.assemble(standard_problem(kind), EXPANSION_GRID, self.constants(kind))
        return self._reports[kind]

    # runner ----------------------------------------------------------------

    def run(self, number: int) -> CriterionResult:
        fn: Callable[[], CriterionResult] = getattr(self, f"criterion_{number}")
        t0 = time.perf_counter()
        res = fn()
        res.seconds = time.perf_counter() - t0
        res.details["scale"] = self.scale
        return res

    def run_all(self, numbers=range(1, 10), echo: Callable[[str], None] | None = None) -> list[CriterionResult]:
        out = []
        for k in numbers:
            r = self.run(k)
            if echo:
                echo(r.line())
            out.append(r)
        return out

    # criteria --------------------------------------------------------------

    def criterion_1(self) -> CriterionResult:
        p = standard_problem()
        data = p.payoff.boundary_data(p.boundary)
        grid = pde.GridConfig(y_max=8.0, t_max=12.0, ny=512, nt=1024)
        t0 = time.perf_counter()
        coarse = pde.solve_value(p.boundary, data, grid)
        elapsed = time.perf_counter() - t0
        fine = pde.solve_value(p.boundary, data, grid.refined())
        exact = leading_closed_form()
        trunc = truncated_reference(grid.t_max)
        err = abs(coarse.origin - exact)
        disc_c, disc_f = abs(coarse.origin - trunc), abs(fine.origin - trunc)
        ratio_disc = disc_c / disc_f
        ratio_literal = err / abs(fine.origin - exact)
        ok = err < 2e-3 and ratio_disc >= 3 and elapsed < 30
        return CriterionResult(1, ok, (
            f"u(0,0)={coarse.origin:.6f} vs {exact:.6f} (err {err:.2e} < 2e-3); "
            f"refinement ratio {ratio_disc:.2f} >= 3 on the discretisation error "
            f"(ratio against the untruncated value {ratio_literal:.2f}, floor set by the t_max horizon)"),
            {"u00": coarse.origin, "u00_refined": fine.origin, "closed_form": exact,
             "truncated_reference": trunc, "error": err, "ratio_discretisation": ratio_disc,
             "ratio_vs_closed_form": ratio_literal, "solve_seconds": elapsed,
             "p_tail": coarse.metadata["truncation"]["p_tail"]})

    def criterion_2(self) -> CriterionResult:
        t0 = time.perf_counter()
        stub = fluctuation.estimate_rho(IncrementDistribution("constant", {"value": 1.0}), 10**4, self.seed)
        ex = fluctuation.estimate_rho(IncrementDistribution("centered-exponential"), self.sizes["c2_exp_epochs"],
                                      self.seed + 1, threads=self.threads)
        normal = IncrementDistribution("standard-normal")
        n1 = fluctuation.estimate_rho(normal, self.sizes["c2_normal_epochs"], self.seed + 10, RHO_CAP,
                                      threads=self.threads)
        n2 = fluctuation.estimate_rho(normal, self.sizes["c2_normal_epochs"], self.seed + 11, RHO_CAP,
                                      threads=self.threads)
        elapsed = time.perf_counter() - t0
        self._constants.setdefault("standard-normal", n1)
        ok = stub.rho == 0.5 and abs(ex.rho - 1.0) <= 0.01 and abs(n1.rho - n2.rho) <= 0.005 and elapsed < 300
        return CriterionResult(2, ok, (
            f"stub rho={stub.rho!r}; exponential rho={ex.rho:.4f}+-{ex.rho_stderr:.4f}; "
            f"normal rho {n1.rho:.5f} / {n2.rho:.5f} (|diff| {abs(n1.rho - n2.rho):.5f} <= 0.005)"),
            {"stub": stub.to_dict(), "exponential": ex.to_dict(), "normal_run_1": n1.to_dict(),
             "normal_run_2": n2.to_dict(), "seconds": elapsed})

    def criterion_3(self) -> CriterionResult:
        r = fluctuation.check_H_harmonic(IncrementDistribution("standard-normal"), [-0.5, -1.0, -2.0],
                                         self.sizes["c3_epochs"], self.seed + 3, RHO_CAP, threads=self.threads)
        zs = [row["z"] for row in r["rows"]]
        ok = all(abs(z) < 3 for z in zs)
        return CriterionResult(3, ok, "z = " + ", ".join(f"{z:+.2f}" for z in zs) + " (all |z| < 3)", r)

    def criterion_4(self) -> CriterionResult:
        kind = "centered-exponential"
        rep = self.report(kind)
        t0 = time.perf_counter()
        study = expansion.rate_study(standard_problem(kind), rep, [100, 400, 1600], self.sizes["c4_paths"],
                                     self.seed + 4, threads=self.threads)
        elapsed = time.perf_counter() - t0
        rows = study["rows"]
        a = []
        for r in rows:
            unc = abs(r["mc"] - r["uncorrected"])
            if unc > 3 * r["mc_stderr"]:
                a.append(abs(r["mc"] - r["corrected"]) < unc)
        ok_a = all(a)
        ok_b = True
        for r0, r1 in zip(rows, rows[1:]):
            tol = 3 * math.sqrt(r0["n"] * r0["mc_stderr"] ** 2 + r1["n"] * r1["mc_stderr"] ** 2)
            ok_b &= r1["sqrt_n_abs_resid_corrected"] <= r0["sqrt_n_abs_resid_corrected"] + tol
        last = rows[-1]
        target = abs(rep.skew_term + rep.overshoot_term)
        gap = abs(last["sqrt_n_abs_resid_uncorrected"] - target)
        ok_c = gap <= 3 * math.sqrt(last["n"]) * last["mc_stderr"]
        ok = ok_a and ok_b and ok_c and elapsed < 1800
        res = ", ".join(f"{r['sqrt_n_abs_resid_corrected']:.4f}" for r in rows)
        return CriterionResult(4, ok, (
            f"(a) {sum(a)}/{len(a)} significant n improved; (b) sqrt(n)|mc-corrected| = {res} "
            f"{'nonincreasing' if ok_b else 'INCREASING'} within 3 se; (c) sqrt(1600)|mc-u| = "
            f"{last['sqrt_n_abs_resid_uncorrected']:.4f} vs |skew+overshoot| = {target:.4f}"),
            {"rows": rows, "trend": study["trend"], "report": rep.to_dict(), "checks": [ok_a, ok_b, ok_c],
             "seconds": elapsed})

    def criterion_5(self) -> CriterionResult:
        details, ok, parts = {}, True, []
        for kind in ("standard-normal", "centered-exponential"):
            rep = self.report(kind)
            c = self.constants(kind)
            p = standard_problem(kind)
            j = walk.joint_overshoot_stats(1600, p.distribution, p.boundary, self.sizes["c5_paths"],
                                           self.seed + 5, delta=rep.delta, threads=self.threads)
            target = c.rho * rep.g00
            se_rd = math.sqrt(j["E_R_delta"].stderr ** 2 + (rep.g00 * c.rho_stderr) ** 2)
            se_r = math.sqrt(j["mean_R"].stderr ** 2 + c.rho_stderr ** 2)
            z_rd = (j["E_R_delta"].mean - target) / se_rd
            z_r = (j["mean_R"].mean - c.rho) / se_r
            checks = {"E_R_delta": abs(z_rd) < 3, "mean_R": abs(z_r) < 3, "corr": abs(j["corr_R_tau"]) < 0.05}
            ok &= all(checks.values())
            details[kind] = {"joint": j, "rho": c.rho, "rho_stderr": c.rho_stderr, "g00": rep.g00,
                             "target": target, "z_R_delta": z_rd, "z_R": z_r, "checks": checks}
            parts.append(f"{kind}: E[R Delta]={j['E_R_delta'].mean:.4f} vs {target:.4f} (z {z_rd:+.1f}), "
                         f"E R={j['mean_R'].mean:.4f} vs {c.rho:.4f} (z {z_r:+.1f}), corr={j['corr_R_tau']:+.3f}")
        return CriterionResult(5, ok, "; ".join(parts), details)

    def criterion_6(self) -> CriterionResult:
        kind = "standard-normal"
        rep = self.report(kind)
        p = standard_problem(kind)
        split = split_payoff(p.payoff, p.boundary, rep.delta)
        t_max = EXPANSION_GRID.t_max
        orc = expansion.convolution_oracle(p.boundary, split.f0, p.distribution, 256, t_max=t_max)
        fn = expansion.truncated_f0(split, t_max)
        mc = walk.mc_expectation(lambda b: fn(b.tau, b.terminal), 256, p.distribution, p.boundary,
                                 self.sizes["c6_paths"], self.seed + 6, threads=self.threads)
        z = (mc.mean - orc.value) / mc.stderr
        ok = abs(z) < 3
        return CriterionResult(6, ok, (
            f"oracle {orc.value:.6f} (+-{orc.error_bound:.1e}) vs MC {mc.mean:.6f}+-{mc.stderr:.1e} (z {z:+.2f})"),
            {"oracle": orc.__dict__, "mc": mc, "z": z})

    def criterion_7(self) -> CriterionResult:
        details, ok, parts = {}, True, []
        for kind in ("standard-normal", "centered-exponential"):
            p = standard_problem(kind)
            ratios, growth = {}, {}
            for n in (100, 400, 1600):
                v = walk.visit_counts(n, p.distribution, p.boundary, self.sizes["c7_paths"], self.seed + 7,
                                      (0.5, 1.0, 2.0, 4.0), threads=self.threads)
                growth[n] = v["growth"].mean / math.log(n)
                if n in (100, 400):
                    shape = np.array([e.mean for e in v["N_d"]]) / (1 + np.array(v["d"]) ** 2)
                    ratios[n] = float(shape.max() / shape.min())
            g = np.array(list(growth.values()))
            spread = float(g.max() / g.min())
            good = all(r < 4 for r in ratios.values()) and spread <= 2.0
            ok &= good
            details[kind] = {"N_d_shape_ratio": ratios, "growth_over_log_n": growth, "growth_spread": spread}
            parts.append(f"{kind}: N_d/(1+d^2) spread {max(ratios.values()):.2f} < 4, "
                         f"growth/log n in [{g.min():.3f}, {g.max():.3f}] (spread {spread:.2f} <= 2)")
        return CriterionResult(7, ok, "; ".join(parts), details)

    def criterion_8(self) -> CriterionResult:
        probes = [(0.0, -0.5), (0.5, -1.0), (1.0, -1.0)]
        details = {}
        p = standard_problem("centered-exponential")
        u = expansion.extrapolated_value_field(p.boundary, p.payoff, EXPANSION_GRID)
        delta = pde.compute_delta(u, p.payoff)
        rows = expansion.e_n_diagnostic(u, p.payoff, delta, p.distribution, 10**4, probes)
        rel = [abs(r["scaled"] / r["u_xxx"] - 1) for r in rows]
        details["skewed"] = rows
        ok_skew = all(x < 0.10 for x in rel)
        p = standard_problem("uniform-symmetric")
        slopes = []
        table = {}
        for n in (100, 1000, 10000):
            table[n] = expansion.e_n_diagnostic(u, p.payoff, delta, p.distribution, n, probes)
        for i in range(len(probes)):
            e = [abs(table[n][i]["e_n"]) for n in table]
            slopes.append(float(np.polyfit(np.log(list(table)), np.log(e), 1)[0]))
        details["symmetric"] = {str(n): rows_n for n, rows_n in table.items()}
        details["slopes"] = slopes
        ok_sym = all(abs(s + 2) <= 0.3 for s in slopes)
        return CriterionResult(8, ok_skew and ok_sym, (
            "exponential |e_n 6n sqrt(n)/m3 / u_xxx - 1| = " + ", ".join(f"{x:.3f}" for x in rel)
            + " (< 0.10); uniform log-log slopes " + ", ".join(f"{s:.3f}" for s in slopes) + " (-2 +- 0.3)"),
            details)

    def criterion_9(self) -> CriterionResult:
        from . import cli
        from .config import standard_config
        import json

        paths = self.sizes["c9_paths"]
        cfg = standard_config(
            "centered-exponential",
            grid={"y_max": 8.0, "t_max": 12.0, "ny": 256, "nt": 512},
            mc={"paths": paths, "master_seed": self.seed + 9, "batch": 1024},
            fluctuation={"epochs": 20000, "cap": 10**7, "exact_shortcut": False},
            n_list=[16, 64, 256],
        )
        tmp = Path(tempfile.mkdtemp(prefix="bw-determinism-"))
        try:
            cfg_path = tmp / "config.json"
            cfg_path.write_text(json.dumps(cfg))
            digests = {}
            for label, threads in (("t1", 1), ("t3", 3), ("t1b", 1)):
                out = tmp / label
                for sub in ("rho", "simulate", "rates"):
                    args = [sub, "--config", str(cfg_path), "--out", str(out), "--threads", str(threads)]
                    if sub == "simulate":
                        args.append("--diagnostics")
                    code = cli.main(args, stdout=lambda *_: None)
                    if code != 0:
                        return CriterionResult(9, False, f"{sub} exited with {code}", {})
                digests[label] = {str(f.relative_to(out)): f.read_bytes() for f in sorted(out.rglob("*")) if f.is_file()}
            names = sorted(digests["t1"])
            same = all(digests[k] == digests["t1"] for k in digests)
            reports = [n for n in names if "/" not in n]
            return CriterionResult(9, same and bool(names), (
                f"{len(names)} artifacts ({', '.join(reports)} plus cached fields) byte-identical "
                "for threads 1, 3 and a repeat run" if same else "artifacts differ between runs"),
                {"artifacts": names})
        finally:
            shutil.rmtree(tmp, ignore_errors=True)


def run(numbers=range(1, 10), scale: str = "full", seed: int = DEFAULT_SEED, threads: int = 1,
        echo: Callable[[str], None] | None = print) -> list[CriterionResult]:
    return Suite(scale, seed, threads).run_all(numbers, echo)


def preflight_problem(problem: Problem) -> None:
    expansion.preflight(problem.boundary, problem.distribution)

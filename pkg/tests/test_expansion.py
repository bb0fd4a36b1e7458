import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from boundarywalk import AssumptionViolation, NumericalRefusal, expansion, pde, walk
from boundarywalk.fluctuation import OvershootConstants
from boundarywalk.model import Boundary, IncrementDistribution, Payoff, Problem, split_payoff

from conftest import KAPPA, U00

GRID = pde.GridConfig(y_max=10.0, t_max=24.0, ny=1024, nt=2048)
# oracle values for b = 1 - t/2, f = exp(-t/2)
G00 = -KAPPA * U00
W00 = KAPPA**3 * U00 / math.sqrt(1.25)


def constants_for(dist, rho):
    return OvershootConstants(rho, 0.0, 1.0, 2 * rho, 0.0, 1000, 0, 10**6, dist.to_dict(), 0)


@pytest.fixture(scope="module")
def exp_report(exp_problem):
    return expansion.assemble(exp_problem, GRID, constants_for(exp_problem.distribution, 1.0))


def test_assemble_matches_closed_forms(exp_report):
    r = exp_report
    assert r.leading == pytest.approx(U00, abs=1e-5)
    assert r.g00 == pytest.approx(G00, abs=5e-5)
    assert r.w00 == pytest.approx(W00, abs=5e-5)
    assert r.m3 == pytest.approx(2.0)
    assert r.skew_term == pytest.approx(W00 / 3, abs=2e-5)
    assert r.overshoot_term == pytest.approx(G00, abs=5e-5)


def test_corrected_shift_between_n(exp_report):
    r = exp_report
    diff = r.corrected(100) - r.corrected(400)
    assert diff == pytest.approx((r.skew_term + r.overshoot_term) * (0.1 - 0.05), rel=1e-12)


def test_report_provenance(exp_report):
    pv = exp_report.to_dict()["provenance"]
    for key in ("problem_hash", "u_hash", "g_hash", "w_hash", "constants_hash", "truncation"):
        assert key in pv


def test_symmetric_law_has_no_skew_term(normal_problem):
    grid = pde.GridConfig(y_max=10.0, t_max=24.0, ny=256, nt=512)
    r = expansion.assemble(normal_problem, grid, constants_for(normal_problem.distribution, 0.58))
    assert r.skew_term == 0.0
    assert r.overshoot_term == pytest.approx(0.58 * r.g00)


@pytest.mark.parametrize("kind", ["centered-exponential", "standard-normal"])
def test_constant_payoff_is_exact(kind):
    dist = IncrementDistribution(kind)
    p = Problem(Boundary.affine(1.0, -0.5), Payoff.time_exponential(2.5, 0.0), dist)
    r = expansion.assemble(p, GRID, constants_for(dist, 0.7))
    for n in (1, 100, 10**4):
        assert r.corrected(n) == 2.5
    assert r.g00 == 0.0 and r.w00 == 0.0


def test_lattice_law_refused():
    dist = IncrementDistribution("two-point")
    p = Problem(Boundary.affine(1.0, -0.5), Payoff.time_exponential(), dist)
    with pytest.raises(AssumptionViolation, match="assumption 1"):
        expansion.assemble(p, GRID, constants_for(dist, 1.0))


def test_flat_boundary_refused(exp_problem):
    p = Problem(Boundary.affine(1.0, 0.0), exp_problem.payoff, exp_problem.distribution)
    with pytest.raises(AssumptionViolation, match="assumption 2"):
        expansion.preflight(p.boundary, p.distribution)


def test_missing_or_foreign_constants(exp_problem):
    with pytest.raises(ValueError):
        expansion.assemble(exp_problem, GRID, None)
    other = constants_for(IncrementDistribution("standard-normal"), 0.58)
    with pytest.raises(ValueError):
        expansion.assemble(exp_problem, GRID, other)


@given(st.sampled_from(["standard-normal", "centered-exponential", "uniform-symmetric", "gaussian-mixture"]))
def test_quadrature_reproduces_moments(kind):
    dist = IncrementDistribution(kind)
    x, w = expansion.quadrature(dist)
    m = dist.moments()
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w @ x == pytest.approx(0.0, abs=1e-10)
    assert w @ x**2 == pytest.approx(1.0, abs=1e-10)
    assert w @ x**3 == pytest.approx(m["m3"], abs=1e-9)


# e_n -------------------------------------------------------------------------


def test_e_n_vanishes_for_constant_payoff():
    b = Boundary.affine(1.0, -0.5)
    f = Payoff.time_exponential(1.5, 0.0)
    u, delta, _, _ = expansion.solve_fields(Problem(b, f, IncrementDistribution("standard-normal")), GRID)
    rows = expansion.e_n_diagnostic(u, f, delta, IncrementDistribution("centered-exponential"), 100,
                                    [(0.0, -0.5), (1.0, -1.0)])
    for r in rows:
        assert abs(r["e_n"]) < 1e-13


def test_e_n_tracks_skew_prediction(exp_problem):
    u = expansion.extrapolated_value_field(exp_problem.boundary, exp_problem.payoff, GRID)
    delta = pde.compute_delta(u, exp_problem.payoff)
    rows = expansion.e_n_diagnostic(u, exp_problem.payoff, delta, exp_problem.distribution, 1000, [(0.0, -0.5)])
    r = rows[0]
    assert r["e_n"] > 0  # u_xxx = kappa^3 u > 0 and EX^3 = 2
    assert r["scaled"] / r["u_xxx"] == pytest.approx(1.0, abs=0.05)
    assert abs(r["residual"]) < 5 * max(r["envelope_smooth"], r["envelope_boundary"])


def test_e_n_probe_checks(exp_problem, exp_report):
    u, delta = exp_report.u, exp_report.delta
    with pytest.raises(ValueError, match="below the boundary"):
        expansion.e_n_diagnostic(u, exp_problem.payoff, delta, exp_problem.distribution, 100, [(0.0, 2.0)])
    with pytest.raises(ValueError, match="too close"):
        expansion.e_n_diagnostic(u, exp_problem.payoff, delta, exp_problem.distribution, 100, [(0.0, 0.95)])


# convolution oracle ----------------------------------------------------------


def test_convolution_preserves_constants(normal_problem):
    r = expansion.convolution_oracle(normal_problem.boundary, lambda t, x: 0.75 + 0 * (t + x),
                                     normal_problem.distribution, 16, t_max=12.0)
    assert r.value == pytest.approx(0.75, abs=1e-10)
    assert r.error_bound < 1e-10


def test_convolution_refusals(normal_problem, exp_problem):
    f0 = lambda t, x: 1.0 + 0 * (t + x)
    with pytest.raises(NumericalRefusal):
        expansion.convolution_oracle(exp_problem.boundary, f0, exp_problem.distribution, 16)
    with pytest.raises(NumericalRefusal):
        expansion.convolution_oracle(normal_problem.boundary, f0, normal_problem.distribution, 1024)
    with pytest.raises(NumericalRefusal, match="under-resolved"):
        expansion.convolution_oracle(normal_problem.boundary, f0, normal_problem.distribution, 16,
                                     points_per_sigma=4)


def test_convolution_agrees_with_monte_carlo(normal_problem):
    p = normal_problem
    u, delta, _, _ = expansion.solve_fields(p, GRID)
    f0 = expansion.truncated_f0(split_payoff(p.payoff, p.boundary, delta), 24.0)
    n = 16
    oracle = expansion.convolution_oracle(p.boundary, f0, p.distribution, n, t_max=24.0)
    fn = lambda batch: f0(batch.tau, batch.terminal)
    mc = walk.mc_expectation(fn, n, p.distribution, p.boundary, 200000, 77)
    assert abs(mc.mean - oracle.value) < 4 * mc.stderr + oracle.error_bound


# rate study ------------------------------------------------------------------


def test_rate_study_columns(exp_problem, exp_report):
    s = expansion.rate_study(exp_problem, exp_report, [4, 16, 64], 20000, 5)
    assert [r["n"] for r in s["rows"]] == [4, 16, 64]
    assert all(set(r) == set(expansion.RATE_COLUMNS) for r in s["rows"])
    assert s["trend"]["status"] in ("pass", "inconclusive-pass", "fail")
    with pytest.raises(ValueError):
        expansion.rate_study(exp_problem, exp_report, [16, 4, 64], 100, 5)
    with pytest.raises(ValueError):
        expansion.rate_study(exp_problem, exp_report, [4, 16], 100, 5)


def test_trend_statistics():
    rows = [{"n": n, "mc": 0.0, "corrected": c, "mc_stderr": 1e-4, "sqrt_n_abs_resid_corrected": r}
            for n, c, r in [(100, 0.01, 0.3), (400, 0.005, 0.2), (1600, 0.002, 0.1)]]
    t = expansion.trend_statistics(rows)
    assert t["kendall_tau"] == pytest.approx(-1.0)
    assert t["status"] == "pass"
    rows[0]["mc_stderr"] = 1.0
    assert expansion.trend_statistics(rows)["status"] == "inconclusive-pass"
    for r, v in zip(rows, (0.1, 0.2, 0.3)):
        r["sqrt_n_abs_resid_corrected"] = v
        r["mc_stderr"] = 1e-4
    assert expansion.trend_statistics(rows)["status"] == "fail"

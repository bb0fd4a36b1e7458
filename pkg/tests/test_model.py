import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from boundarywalk import AssumptionViolation, ConfigError
from boundarywalk.model import (Boundary, DeltaTrace, IncrementDistribution, Payoff, Problem, boundary_eval,
                                boundary_level, split_payoff, standard_problem)

KINDS = ["standard-normal", "centered-exponential", "uniform-symmetric", "gaussian-mixture"]


def test_affine_boundary():
    b = Boundary.affine(1.0, -0.5)
    assert b(0.0) == 1.0
    assert b(2.0) == 0.0
    assert b.derivative(3.0) == -0.5
    assert b.eventually_crosses


def test_flat_boundary_does_not_cross_eventually():
    assert not Boundary.affine(1.0, 0.0).eventually_crosses


def test_nonpositive_start_is_assumption_3():
    with pytest.raises(AssumptionViolation) as e:
        Boundary.affine(0.0, -1.0)
    assert e.value.assumption == 3


@given(st.floats(0.0, 20.0))
def test_perturbed_derivative_matches_difference(t):
    b = Boundary.perturbed(1.0, -0.5, 0.2, 3.0)
    h = 1e-6
    assert abs((b(t + h) - b(t - h)) / (2 * h) - b.derivative(t)) < 1e-6
    assert abs(b.derivative(t)) <= b.derivative_bound + 1e-12


def test_polynomial_boundary_is_c1_at_join():
    b = Boundary.polynomial([1.0, -0.2, -0.3], 2.0)
    h = 1e-7
    assert abs(b(2.0 + h) - b(2.0 - h)) < 1e-6
    assert b.derivative(2.0) == pytest.approx(b.derivative(5.0))
    assert b.asymptotic_slope == pytest.approx(-1.4)


def test_numba_boundary_eval_matches_numpy():
    for b in (Boundary.affine(1.0, -0.5), Boundary.perturbed(1.0, -0.5, 0.2, 3.0),
              Boundary.polynomial([1.0, -0.2, -0.3], 2.0)):
        for t in (0.0, 0.7, 2.0, 9.5):
            assert boundary_eval(b.code, b.code_params, t) == pytest.approx(float(b(t)), abs=1e-14)


def test_boundary_level_scaling():
    b = Boundary.affine(1.0, -0.5)
    # sqrt(n) b(k/n)
    assert boundary_level(b, np.array([0, 4]), 4)[1] == pytest.approx(2.0 * 0.5)


@given(st.sampled_from(["gaussian-bump", "windowed-polynomial"]), st.floats(-3, 3), st.floats(0, 5))
def test_payoff_derivatives(kind, x, t):
    f = Payoff(kind, {"amplitude": 1.3, "rate": 0.4, "center": 0.5, "width": 0.8, "coeffs": [1.0, -0.5, 0.25]})
    h = 1e-5
    assert f.f_x(t, x) == pytest.approx((f(t, x + h) - f(t, x - h)) / (2 * h), abs=1e-6)
    assert f.f_xx(t, x) == pytest.approx((f(t, x + h) - 2 * f(t, x) + f(t, x - h)) / h**2, abs=1e-3)
    assert f.f_t(t, x) == pytest.approx((f(t + h, x) - f(t - h, x)) / (2 * h), abs=1e-6)
    f.check_bounds(t, x)


def test_negative_rate_is_assumption_4():
    with pytest.raises(AssumptionViolation) as e:
        Payoff.time_exponential(1.0, -0.1)
    assert e.value.assumption == 4


@pytest.mark.parametrize("kind,m3,m4", [("standard-normal", 0, 3), ("centered-exponential", 2, 9),
                                        ("uniform-symmetric", 0, 1.8), ("two-point", 0, 1)])
def test_exact_moments(kind, m3, m4):
    assert IncrementDistribution(kind).moments() == {"m3": m3, "m4": m4}


@pytest.mark.parametrize("kind", KINDS)
def test_sampled_increments_are_standardised(kind):
    d = IncrementDistribution(kind, {"weight": 0.3, "means": [-1.0, 2.0], "sds": [0.5, 1.0]}
                              if kind == "gaussian-mixture" else {})
    x = d.sample(400000, seed=5)
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1) < 0.02
    x3 = x**3
    assert abs(x3.mean() - d.moments()["m3"]) < 5 * x3.std() / math.sqrt(x.size)


def test_lattice_refusal_cites_assumption_1():
    d = IncrementDistribution("two-point")
    assert not d.non_lattice
    with pytest.raises(AssumptionViolation) as e:
        d.require_non_lattice()
    assert e.value.assumption == 1


def test_problem_from_dict_reports_key_paths():
    good = standard_problem().to_dict()
    assert Problem.from_dict(good) == standard_problem()
    bad = standard_problem().to_dict()
    del bad["boundary"]["params"]["b0"]
    with pytest.raises(ConfigError) as e:
        Problem.from_dict(bad)
    assert e.value.path == "boundary.params.b0"
    with pytest.raises(ConfigError) as e:
        Problem.from_dict({**good, "distribution": {"kind": "cauchy"}})
    assert e.value.path == "distribution.kind"


def test_digests_are_content_hashes():
    assert standard_problem().digest() == standard_problem().digest()
    assert standard_problem().digest() != standard_problem("standard-normal").digest()


@given(st.floats(0, 5), st.floats(-3, 1))
def test_split_payoff_adds_up(t, x):
    p = standard_problem()
    delta = DeltaTrace(np.linspace(0, 6, 61), -0.3 * np.exp(-np.linspace(0, 6, 61) / 2))
    s = split_payoff(p.payoff, p.boundary, delta)
    assert s.f0(t, x) + s.f1(t, x) == pytest.approx(p.payoff(t, x), abs=1e-14)
    # f1 vanishes on the boundary
    assert s.f1(t, p.boundary(t)) == 0.0


def test_delta_trace_interpolates_nodes_and_refuses_outside():
    d = DeltaTrace([0.0, 1.0, 2.0], [1.0, 0.5, 0.0])
    assert d(1.0) == 0.5
    assert d.window == (0.0, 2.0)
    with pytest.raises(Exception):
        d(2.5)
    assert math.isclose(DeltaTrace.zero(3.0)(1.7), 0.0)

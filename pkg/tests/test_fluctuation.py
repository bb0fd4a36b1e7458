import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from boundarywalk import NumericalRefusal, fluctuation
from boundarywalk.kernels.ladder import ladder_batch, renewal_batch
from boundarywalk import rng
from boundarywalk.model import IncrementDistribution

NORMAL = IncrementDistribution("standard-normal")
EXPO = IncrementDistribution("centered-exponential")
STUB = IncrementDistribution("constant", {"value": 1.0})
CAP = 10**10

# mean limiting overshoot of the Gaussian walk: -zeta(1/2) / sqrt(2 pi)
RHO_NORMAL = float(-mpmath.zeta(0.5) / mpmath.sqrt(2 * mpmath.pi))


@pytest.fixture(scope="module")
def normal_constants():
    return fluctuation.estimate_rho(NORMAL, 200000, 31, CAP)


def test_oracle_value():
    assert RHO_NORMAL == pytest.approx(0.5825971579, abs=1e-10)


def test_stub_rho_is_exact():
    c = fluctuation.estimate_rho(STUB, 10**4, 1)
    assert c.rho == 0.5
    assert c.rho_stderr == 0.0
    assert c.capped_fraction == 0.0


def test_exponential_rho_exact_law_and_walked():
    a = fluctuation.estimate_rho(EXPO, 10**5, 2, exact_shortcut=True)
    assert abs(a.rho - 1) < 4 * a.rho_stderr
    b = fluctuation.estimate_rho(EXPO, 2 * 10**4, 3, cap=10**7)
    assert abs(b.rho - 1) < 4 * b.rho_stderr


def test_normal_rho_matches_zeta_oracle(normal_constants):
    c = normal_constants
    assert abs(c.rho - RHO_NORMAL) < 4 * c.rho_stderr
    assert c.capped_fraction < fluctuation.MAX_CAPPED_FRACTION


def test_too_few_epochs_rejected():
    with pytest.raises(ValueError):
        fluctuation.estimate_rho(NORMAL, 100, 1)


def test_capped_fraction_refusal():
    with pytest.raises(NumericalRefusal):
        fluctuation.estimate_rho(NORMAL, 10**4, 1, cap=3)


def test_rho_invariant_to_cap(normal_constants):
    other = fluctuation.estimate_rho(NORMAL, 200000, 31, 10**7)
    assert abs(other.rho - normal_constants.rho) < 3 * math.hypot(other.rho_stderr, normal_constants.rho_stderr)


def test_constants_round_trip(tmp_path, normal_constants):
    p = normal_constants.save(tmp_path / "c.json")
    back = fluctuation.OvershootConstants.load(p)
    assert back == normal_constants
    assert back.digest() == normal_constants.digest()
    assert normal_constants.to_dict()["distribution_hash"] == NORMAL.digest()


def test_sample_ladder_stub():
    s = fluctuation.sample_ladder(STUB, -0.5, 100, 0)
    assert (s.epoch, s.height, s.capped) == (1, 0.5, False)
    s = fluctuation.sample_ladder(STUB, -3.5, 2, 0)
    assert s.capped


def test_H_examples(normal_constants):
    h, se = fluctuation.estimate_H(NORMAL, normal_constants.rho, 10**4, 1, normal_constants)
    assert (h, se) == (0.0, 0.0)
    stub = fluctuation.estimate_rho(STUB, 10**4, 1)
    h, _ = fluctuation.estimate_H(STUB, -0.5, 10**4, 1, stub)
    assert h == 0.0
    h, _ = fluctuation.estimate_H(STUB, -1.0, 10**4, 1, stub)
    assert h == -0.5


@given(st.floats(0.0, 50.0))
def test_H_is_linear_above_zero(x):
    c = fluctuation.OvershootConstants(0.6, 0.0, 1.0, 1.2, 2.0, 10, 0, 10, NORMAL.to_dict(), 0)
    assert fluctuation.estimate_H(NORMAL, x, 10**4, 0, c) == (x - 0.6, 0.0)


def test_H_negative_branch_tail(normal_constants):
    # H(x) + rho = E S_{T_x}; from x = -2 the overshoot is already near stationary
    h, se = fluctuation.estimate_H(NORMAL, -2.0, 10**5, 4, normal_constants, CAP)
    assert se < 0.01
    assert abs(h) < 0.02


def test_H_monotone_on_grid(normal_constants):
    xs = [-3.0, -1.5, -0.75, -0.25]
    vals = [fluctuation.estimate_H(NORMAL, x, 40000, 6, normal_constants, CAP) for x in xs]
    for (a, sa), (b, sb) in zip(vals, vals[1:]):
        assert b >= a - 3 * math.hypot(sa, sb)


def test_H_harmonic_stub_and_normal():
    r = fluctuation.check_H_harmonic(STUB, [-1.0], 10**4, 0)
    assert r["max_abs_deviation"] == 0.0
    r = fluctuation.check_H_harmonic(NORMAL, [-0.5, -1.0, -2.0], 50000, 8, CAP)
    assert abs(r["worst_z"]) < 3.5
    with pytest.raises(ValueError):
        fluctuation.check_H_harmonic(NORMAL, [0.5], 10**4, 0)


def test_renewal_small_window_counts_origin():
    m = fluctuation.renewal_measure(EXPO, (0.0, 1e-9), 2000, 1)
    assert m.mean >= 1


def test_exponential_renewal_is_lebesgue_plus_atom():
    m = fluctuation.renewal_measure(EXPO, (0.0, 3.0), 8000, 2, cap=10**7)
    assert m.within(4.0, k=4)


def test_two_route_renewal_consistency(normal_constants):
    direct = fluctuation.renewal_measure(NORMAL, (0.0, 2.0), 20000, 3, CAP)
    wald = fluctuation.renewal_measure_wald(NORMAL, 2.0, 40000, 3, normal_constants, CAP)
    assert abs(direct.mean - wald.mean) < 3.5 * math.hypot(direct.stderr, wald.stderr)


def test_ladder_backends_agree():
    keys = rng.stream_keys(4, 0, 200)
    for dist in (NORMAL, EXPO):
        a = ladder_batch(keys, -1.0, 10**4, dist.code, dist.code_params, backend="numba")
        b = ladder_batch(keys, -1.0, 10**4, dist.code, dist.code_params, backend="numpy")
        assert np.array_equal(a[0], b[0])
        np.testing.assert_allclose(a[1], b[1], rtol=1e-9, atol=1e-12)
    a = renewal_batch(keys, 0.0, 2.0, 10**4, NORMAL.code, NORMAL.code_params, backend="numba")
    b = renewal_batch(keys, 0.0, 2.0, 10**4, NORMAL.code, NORMAL.code_params, backend="numpy")
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_blocking_leaves_ladder_law_unchanged():
    # same law for the epoch and the height, so crossing within the cap is the same event
    m, cap = 20000, 10**5
    e_b, h_b = ladder_batch(rng.stream_keys(12, 0, m), -12.0, cap, NORMAL.code, NORMAL.code_params, block=True)
    e_p, h_p = ladder_batch(rng.stream_keys(13, 0, m), -12.0, cap, NORMAL.code, NORMAL.code_params, block=False)
    done_b, done_p = ~np.isnan(h_b), ~np.isnan(h_p)
    p_b, p_p = done_b.mean(), done_p.mean()
    assert abs(p_b - p_p) < 4 * math.sqrt(2 * p_b * (1 - p_b) / m)
    se = math.hypot(np.std(h_b[done_b]) / math.sqrt(done_b.sum()), np.std(h_p[done_p]) / math.sqrt(done_p.sum()))
    assert abs(h_b[done_b].mean() - h_p[done_p].mean()) < 4 * se

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from boundarywalk import AssumptionViolation, StepCapExceeded, walk
from boundarywalk.model import Boundary, IncrementDistribution, Payoff

from conftest import U00

STUB1 = IncrementDistribution("constant", {"value": 1.0})
STUB2 = IncrementDistribution("constant", {"value": 2.0})
EXPO = IncrementDistribution("centered-exponential")
NORMAL = IncrementDistribution("standard-normal")
B = Boundary.affine(1.0, -0.5)
EXP_PAYOFF = walk.payoff_functional(Payoff.time_exponential(1.0, 0.5))


def test_stub_walk_hand_case():
    # levels sqrt(4) b(k/4) = 2 - k/4; S_k = k first reaches them at k = 2 (level 1.5)
    r = walk.simulate_crossing(4, STUB1, B, path_seed=0, d_values=[1.0, 1e9])
    assert r.stop_index == 2
    assert r.tau == 0.5
    assert r.terminal == 1.0
    assert r.overshoot == 0.5
    assert r.steps_near_boundary == {1.0: 1, 1e9: 2}


def test_stub_on_flat_boundary():
    r = walk.simulate_crossing(1, STUB2, Boundary.affine(1.0), path_seed=3)
    assert (r.stop_index, r.overshoot) == (1, 1.0)


def test_flat_boundary_is_refused_for_expectations():
    with pytest.raises(AssumptionViolation) as e:
        walk.mc_expectation(EXP_PAYOFF, 4, NORMAL, Boundary.affine(1.0), 100, 1)
    assert e.value.assumption == 2


def test_step_cap_raises_instead_of_censoring():
    slow = Boundary.affine(50.0, -1e-3)
    with pytest.raises(StepCapExceeded):
        walk.mc_expectation(EXP_PAYOFF, 1, NORMAL, slow, 100, 1, cap_factor=1.0, t_max=1.0)


def test_single_path_matches_batch_record():
    rec = walk.simulate_crossing(16, NORMAL, B, path_seed=9, path_index=5)
    batch = walk._Walk(16, NORMAL, B, 9, walk.T_MAX, walk.CAP_FACTOR, None).batch(0, 8)
    assert rec.stop_index == batch.stop_index[5]
    assert rec.overshoot == batch.overshoot[5]


@given(st.integers(1, 64), st.sampled_from([NORMAL, EXPO]), st.integers(0, 1000))
def test_overshoot_is_nonnegative_and_time_is_lattice(n, dist, seed):
    b = walk._Walk(n, dist, B, seed, walk.T_MAX, walk.CAP_FACTOR, None).batch(0, 64)
    assert np.all(b.overshoot >= 0)
    assert np.all(b.stop_index >= 1)
    np.testing.assert_allclose(b.tau * n, b.stop_index)
    np.testing.assert_allclose(b.terminal * math.sqrt(n), walk.boundary_level(B, b.stop_index, n) + b.overshoot,
                               atol=1e-9)


def test_thread_count_does_not_change_results():
    kw = dict(batch=512)
    a = walk.mc_expectation(EXP_PAYOFF, 25, EXPO, B, 3000, 17, threads=1, **kw)
    b = walk.mc_expectation(EXP_PAYOFF, 25, EXPO, B, 3000, 17, threads=4, **kw)
    assert a == b


def test_backends_agree_on_paths():
    for dist in (NORMAL, EXPO, IncrementDistribution("gaussian-mixture"), IncrementDistribution("uniform-symmetric")):
        w = walk._Walk(36, dist, B, 5, walk.T_MAX, walk.CAP_FACTOR, "numba")
        v = walk._Walk(36, dist, B, 5, walk.T_MAX, walk.CAP_FACTOR, "numpy")
        a, b = w.batch(0, 300), v.batch(0, 300)
        assert np.array_equal(a.stop_index, b.stop_index)
        np.testing.assert_allclose(a.overshoot, b.overshoot, rtol=1e-10, atol=1e-12)


def test_exponential_overshoot_is_exp1():
    # memorylessness: the excess over any level is exactly Exp(1)
    r = walk.overshoot_moments(50, EXPO, B, 40000, 3)
    assert r["mean_R"].within(1.0, k=4)
    assert r["mean_R2"].within(2.0, k=4)


def test_large_n_approaches_brownian_value():
    est = walk.mc_expectation(EXP_PAYOFF, 400, NORMAL, B, 20000, 8)
    # normal increments: no skew term; the overshoot term is rho g / sqrt(n) ~ -0.0097
    assert est.within(U00 - 0.5826 * 0.3331 / 20, k=4)


def test_brownian_oracle_matches_closed_form():
    est = walk.brownian_oracle(B, 1e-3, 20000, 2, data=lambda t: np.exp(-t / 2))
    assert est.within(U00, k=4)
    with pytest.raises(ValueError):
        walk.brownian_oracle(B, 1e-2, 100, 2, data=lambda t: t)


def test_joint_stats_report_correlation_and_payoff():
    r = walk.joint_overshoot_stats(64, EXPO, B, 20000, 4, payoff=Payoff.time_exponential(1.0, 0.5))
    assert abs(r["corr_R_tau"]) < 4 * r["corr_stderr"] + 0.01
    assert 0.45 < r["payoff"].mean < 0.54
    assert r["paths"] == 20000


def test_visit_counts_shapes():
    v = walk.visit_counts(25, NORMAL, B, 2000, 6, (0.5, 1.0, 2.0), intervals=[(0.0, 1.0)], alpha=0.5)
    nd = [e.mean for e in v["N_d"]]
    assert nd == sorted(nd)
    assert v["growth"].mean > 0
    assert list(v["M_B"]) == [(0.0, 1.0)]


def test_stream_records_csv(tmp_path):
    p = walk.stream_records_csv(tmp_path / "r.csv", 9, NORMAL, B, 10, 1, header=["seed 1"])
    lines = p.read_text().splitlines()
    assert lines[0] == "# seed 1"
    assert lines[1] == "path_id,stop_index,tau,terminal,overshoot"
    assert len(lines) == 12
    again = walk.stream_records_csv(tmp_path / "s.csv", 9, NORMAL, B, 10, 1, header=["seed 1"])
    assert again.read_bytes() == p.read_bytes()

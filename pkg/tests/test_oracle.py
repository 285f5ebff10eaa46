import math
import time

import numpy as np
import pytest

from softctrl import oracle as orc


@pytest.fixture
def mdp():
    return orc.random_mdp(np.random.default_rng(0), 5, 3, 0.9)


def test_mdp_validation():
    with pytest.raises(ValueError):
        orc.FiniteMdp(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), 0.9)
    with pytest.raises(ValueError):
        orc.FiniteMdp(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), 1.0)
    with pytest.raises(ValueError):
        orc.FiniteMdp(np.full((2, 1, 2), 0.5), np.zeros((3, 1)), 0.5)


def test_soft_vi_large_tau_gives_uniform_policy(mdp):
    q = orc.soft_vi(mdp, 1e6, 50)
    pi = orc.softmax(q / 1e6)
    assert np.max(pi.max(axis=1) - pi.min(axis=1)) <= 1e-6


def test_soft_vi_small_tau_matches_hard_vi(mdp):
    assert np.max(np.abs(orc.soft_vi(mdp, 1e-6, 300) - orc.hard_vi(mdp, 300))) <= 1e-3


def test_single_state_single_action_geometric_series():
    m = orc.FiniteMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.8)
    assert orc.soft_vi(m, 0.7, 400)[0, 0] == pytest.approx(1 / (1 - 0.8), abs=1e-12)


def test_alpha_zero_recovers_soft_vi(mdp):
    pi0 = orc.random_policy(np.random.default_rng(1), 5, 3)
    m = orc.munchausen_vi(mdp, 0.8, 0.0, pi0, 60)
    assert np.array_equal(m.final, orc.soft_vi(mdp, 0.8, 60))


def test_uniform_reference_is_constant_shift(mdp):
    pi0 = np.full((5, 3), 1 / 3)
    tau, alpha = 0.9, 0.35
    m = orc.munchausen_vi(mdp, tau, alpha, pi0, 80)
    # the constant bonus c = alpha*tau*ln(1/3) accumulates as c * sum_j gamma^j
    for k, q in enumerate(m.q):
        shift = alpha * tau * math.log(1 / 3) * sum(mdp.gamma ** j for j in range(k))
        soft = orc.soft_vi(mdp, tau, k)
        np.testing.assert_allclose(q - soft, shift, atol=1e-10)


def test_entkl_without_kl_is_soft_vi(mdp):
    pi0 = orc.random_policy(np.random.default_rng(2), 5, 3)
    e = orc.entkl_vi(mdp, 0.6, 0.0, pi0, 50)
    np.testing.assert_allclose(e.final, orc.soft_vi(mdp, 0.6, 50), rtol=0, atol=1e-12)


def test_kl_dominance_recovers_reference(mdp):
    pi0 = orc.random_policy(np.random.default_rng(3), 5, 3)
    e = orc.entkl_vi(mdp, 0.0, 1e3, pi0, 50)
    tv = 0.5 * np.abs(e.policies[-1] - pi0).sum(axis=1)
    assert tv.max() <= 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_shift_equivalence_per_seed(seed):
    rng = np.random.default_rng(seed)
    mdp = orc.random_mdp(rng, 8, 4, 0.9)
    dq, dp = orc.shift_discrepancy(mdp, 1.2, 0.4, orc.random_policy(rng, 8, 4), 100)
    assert dq <= 1e-10 and dp <= 1e-12


def test_shift_equivalence_suite_within_budget():
    t0 = time.perf_counter()
    q_check, pi_check = orc.check_shift_equivalence()
    assert time.perf_counter() - t0 < 10.0
    assert q_check.passed and pi_check.passed


def test_identity_examples():
    rng = np.random.default_rng(4)
    q = rng.normal(size=(4, 3))
    pi = orc.random_policy(rng, 4, 3)
    assert orc.improvement_identity_check(q, pi, pi, 0.7, 0.5) <= 1e-12
    assert orc.improvement_identity_check(q, pi, orc.random_policy(rng, 4, 3), 2.0, 0.9) <= 1e-12


def test_identity_sweep_within_budget():
    t0 = time.perf_counter()
    check = orc.check_improvement_identity()
    assert time.perf_counter() - t0 < 1.0
    assert check.passed and check.tolerance == 1e-12


def test_reference_floor():
    np.testing.assert_array_equal(orc.floored_log(np.array([0.0, 1.0])), [math.log(1e-6), 0.0])


def test_contraction_sanity():
    assert orc.check_contraction().passed


def test_suite_and_table():
    checks = orc.run_suite()
    assert all(c.passed for c in checks)
    table = orc.format_table(checks)
    assert table.count("PASS") == len(checks)
    assert orc.format_table([orc.Check("x", 1.0, 0.5, 0.0)]).endswith("FAIL")


def test_entropy_and_kl_helpers():
    pi = np.array([[1.0, 0.0], [0.5, 0.5]])
    np.testing.assert_allclose(orc.entropy(pi), [0.0, math.log(2)])
    np.testing.assert_allclose(orc.kl(pi, np.full((2, 2), 0.5)), [math.log(2), 0.0], atol=1e-15)

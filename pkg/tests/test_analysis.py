import numpy as np
import pytest

from hcalab.analysis import (EMPIRICAL, EXACT, PGConfig, PreconditionError,
                             cross_action_covariance_check, empirical_moments, exact_moments,
                             pg_update_variance, variance_decomposition)
from hcalab.environments import A_, benchmark_instances, random_softmax_params, random_value
from hcalab.estimators import DELTA_HCA, ESTIMATORS, HCA, MC, EstimatorInputs, estimate_batch
from hcalab.exact_oracle import build_oracle
from hcalab.mdp_core import TabularMDP, ValueFunction, softmax_policy
from hcalab.trajectories import sample_batch

from conftest import small_random
from test_estimators import action_blind


def inputs_for(mdp, policy, N, v=None):
    o = build_oracle(mdp, policy, N)
    return EstimatorInputs(policy, o.v if v is None else v, o, N, mdp.discount)


def test_figure1_exact_variances(figure1):
    mdp, pol = figure1
    inp = inputs_for(mdp, pol, 3)
    want = {MC: 0.0, HCA: 1.0, DELTA_HCA: 0.0}
    for tag, var in want.items():
        rep = exact_moments(mdp, pol, A_, inp, tag)
        assert rep.mode == EXACT
        assert np.allclose(rep.variance, var, atol=1e-12)
        assert np.allclose(rep.mean, 0.0, atol=1e-12)
        assert np.array_equal(np.diag(rep.covariance), rep.variance)


def test_zero_rewards_give_zero_moments(instances):
    inst = instances[7]
    mdp = TabularMDP(inst.mdp.transition, np.zeros_like(inst.mdp.reward), inst.mdp.discount,
                     inst.mdp.terminal, inst.mdp.horizon)
    inp = inputs_for(mdp, inst.policy, 3, v=ValueFunction(np.zeros(mdp.num_states)))
    for tag in ESTIMATORS:
        rep = exact_moments(mdp, inst.policy, 0, inp, tag)
        assert np.all(rep.mean == 0.0) and np.all(rep.variance == 0.0)


def test_covariance_symmetric(instances):
    inst = instances[3]
    inp = inputs_for(inst.mdp, inst.policy, 4, v=random_value(inst.mdp, 1))
    for tag in ESTIMATORS:
        c = exact_moments(inst.mdp, inst.policy, 0, inp, tag).covariance
        assert np.max(np.abs(c - c.T)) <= 1e-12


def test_empirical_constant_samples():
    rep = empirical_moments(np.full((50, 3), 2.5))
    assert rep.mode == EMPIRICAL and rep.sample_count == 50
    assert np.all(rep.variance == 0.0) and np.all(rep.mean_stderr == 0.0)


def test_empirical_needs_two_samples():
    with pytest.raises(ValueError):
        empirical_moments(np.zeros((1, 2)))


def test_figure1_hca_sampled_variance(figure1):
    mdp, pol = figure1
    inp = EstimatorInputs(pol, build_oracle(mdp, pol, 3).v, build_oracle(mdp, pol, 3), 3, 1.0)
    batch = sample_batch(mdp, pol, A_, 4, seed=11, n=100_000)
    rep = empirical_moments(estimate_batch(HCA, batch, 0, inp))
    assert np.all(np.abs(rep.variance - 1.0) <= 3 * rep.variance_stderr + 1e-12)


def test_sampled_moments_match_exact():
    insts = benchmark_instances(20, seed=5)
    for i, inst in enumerate(insts):
        inp = inputs_for(inst.mdp, inst.policy, 3, v=random_value(inst.mdp, i))
        batch = sample_batch(inst.mdp, inst.policy, 0, 3, seed=100 + i, n=20_000)
        for tag in (MC, DELTA_HCA):
            ex = exact_moments(inst.mdp, inst.policy, 0, inp, tag)
            em = empirical_moments(estimate_batch(tag, batch, 0, inp))
            assert np.all(np.abs(em.mean - ex.mean) <= 4 * em.mean_stderr + 1e-12)
            assert np.all(np.abs(em.variance - ex.variance) <= 4 * em.variance_stderr + 1e-12)


def test_decomposition_cross_terms_vanish_with_exact_values(instances):
    for inst in instances[:20]:
        inp = inputs_for(inst.mdp, inst.policy, 5)
        for s in np.flatnonzero(~inst.mdp.terminal):
            for tag in (MC, DELTA_HCA):
                rep = variance_decomposition(inst.mdp, inst.policy, s, inp, tag)
                assert rep.lemma_applies
                assert rep.max_cross <= 1e-10
                assert np.allclose(rep.total, rep.direct_variance, atol=1e-10)
                ex = exact_moments(inst.mdp, inst.policy, s, inp, tag).variance
                assert np.allclose(rep.direct_variance, ex, atol=1e-10)


def test_decomposition_single_term(instances):
    inst = instances[0]
    inp = inputs_for(inst.mdp, inst.policy, 1, v=random_value(inst.mdp, 2))
    rep = variance_decomposition(inst.mdp, inst.policy, 0, inp, MC)
    assert rep.per_k_variance.shape[1] == 1
    assert np.allclose(rep.per_k_variance[:, 0], rep.total, atol=1e-14)


def test_decomposition_with_noisy_values_is_reported(instances):
    inst = instances[1]
    o = build_oracle(inst.mdp, inst.policy, 4)
    v = ValueFunction.for_mdp(inst.mdp, o.v.values + np.random.default_rng(0).normal(
        0, 0.3, inst.mdp.num_states))
    rep = variance_decomposition(inst.mdp, inst.policy, 0,
                                 EstimatorInputs(inst.policy, v, o, 4, inst.mdp.discount), MC)
    assert not rep.lemma_applies
    assert np.allclose(rep.total, rep.direct_variance, atol=1e-10)
    print("max cross term with noisy values:", rep.max_cross)


def test_decomposition_rejects_reward_hca(figure1):
    mdp, pol = figure1
    with pytest.raises(ValueError):
        variance_decomposition(mdp, pol, A_, inputs_for(mdp, pol, 3), HCA)


def test_covariance_zero_advantage_mdp():
    mdp, pol = action_blind(seed=3, reward_depends_on_action=False)
    inp = inputs_for(mdp, pol, 4)
    chk = cross_action_covariance_check(mdp, pol, 0, inp)
    off = ~np.eye(2, dtype=bool)
    assert np.allclose(chk.mc_covariance[off], 0.0, atol=1e-12)
    assert chk.passed


def test_covariance_figure1(figure1):
    mdp, pol = figure1
    chk = cross_action_covariance_check(mdp, pol, A_, inputs_for(mdp, pol, 3))
    assert np.allclose(chk.mc_covariance, 0.0, atol=1e-12)
    assert np.allclose(chk.dhca_covariance, 0.0, atol=1e-12)
    assert chk.passed


def test_covariance_identities_on_random_mdps():
    rng = np.random.default_rng(42)
    for i in range(100):
        mdp, _, pol = small_random(int(rng.integers(1 << 30)), num_states=4,
                                   num_actions=int(rng.integers(2, 4)),
                                   discount=float(rng.choice([1.0, 0.9])))
        inp = inputs_for(mdp, pol, int(rng.integers(1, 6)))
        for s in range(3):
            chk = cross_action_covariance_check(mdp, pol, s, inp)
            assert chk.mc_matches and chk.dhca_matches and chk.dhca_dominates, (i, s)


def test_covariance_requires_exact_values(instances):
    inst = instances[0]
    inp = inputs_for(inst.mdp, inst.policy, 3, v=random_value(inst.mdp, 9))
    with pytest.raises(PreconditionError, match="residual"):
        cross_action_covariance_check(inst.mdp, inst.policy, 0, inp)


def test_update_variance_assembly(instances):
    for inst in instances[:20]:
        pg = PGConfig(0.1, inst.params)
        inp = inputs_for(inst.mdp, inst.policy, 3, v=random_value(inst.mdp, 4))
        for tag in ESTIMATORS:
            rep = pg_update_variance(inst.mdp, pg, 0, inp, tag)
            assert np.allclose(rep.per_coordinate_variance, rep.assembled_variance, atol=1e-10)
            assert np.all(rep.per_coordinate_variance >= -1e-12)
            assert rep.step_trace == pytest.approx(0.01 * rep.total_trace)


def test_update_variance_zero_advantage():
    # deterministic action-blind walk: every TD error is zero under the exact values
    S = 4
    P = np.zeros((S, 2, S))
    R = np.zeros((S, 2, S))
    for s in range(S - 1):
        P[s, :, s + 1] = 1.0
        R[s, :, s + 1] = s - 1.5
    P[S - 1, :, S - 1] = 1.0
    mdp = TabularMDP(P, R, 0.9, [False] * (S - 1) + [True], 4)
    params = random_softmax_params(S, 2, 1)
    pol = softmax_policy(params)
    inp = inputs_for(mdp, pol, 3)
    for tag in (MC, DELTA_HCA):
        rep = pg_update_variance(mdp, PGConfig(1.0, params), 0, inp, tag)
        assert rep.total_trace <= 1e-24


def test_update_variance_two_actions_ordered():
    insts = benchmark_instances(40, seed=3, actions=(2,))
    for inst in insts:
        inp = inputs_for(inst.mdp, inst.policy, 4)
        pg = PGConfig(1.0, inst.params)
        for s in np.flatnonzero(~inst.mdp.terminal):
            mc = pg_update_variance(inst.mdp, pg, s, inp, MC).total_trace
            dh = pg_update_variance(inst.mdp, pg, s, inp, DELTA_HCA).total_trace
            assert dh <= mc + 1e-10


def test_update_variance_three_actions_reported_only():
    insts = benchmark_instances(10, seed=4, actions=(3,))
    flips = 0
    for inst in insts:
        inp = inputs_for(inst.mdp, inst.policy, 4)
        pg = PGConfig(1.0, inst.params)
        mc = pg_update_variance(inst.mdp, pg, 0, inp, MC).total_trace
        dh = pg_update_variance(inst.mdp, pg, 0, inp, DELTA_HCA).total_trace
        flips += dh > mc + 1e-10
    print(f"3-action instances where delta-HCA update variance exceeds MC: {flips}/10")


def test_update_variance_policy_mismatch(instances):
    inst = instances[0]
    other = random_softmax_params(inst.mdp.num_states, inst.mdp.num_actions, 77)
    with pytest.raises(PreconditionError):
        pg_update_variance(inst.mdp, PGConfig(1.0, other), 0,
                           inputs_for(inst.mdp, inst.policy, 2), MC)


def test_pg_config_rejects_bad_step(instances):
    with pytest.raises(ValueError):
        PGConfig(0.0, instances[0].params)

"""Canonical MDPs: the HCA counterexample, slippery chains and random instances."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .mdp_core import (Policy, SoftmaxPolicy, TabularMDP, ValueFunction, check_mdp,
                       load_mdp, softmax_policy)

# state labels of the counterexample
A_, B_, C_, D_, T_ = range(5)
FIGURE1_STATES = ("A", "B", "C", "D", "T")


def _figure1_model() -> TabularMDP:
    S, A = 5, 2
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    P[A_, 0, B_] = 1.0
    P[A_, 1, C_] = 1.0
    R[A_, 0, B_] = 1.0
    R[A_, 1, C_] = 1.0
    for a in range(A):
        P[B_, a, D_] = 1.0
        P[C_, a, D_] = 1.0
        R[B_, a, D_] = -1.0
        R[C_, a, D_] = -1.0
        P[D_, a, T_] = 1.0
        P[T_, a, T_] = 1.0
    terminal = np.array([False, False, False, False, True])
    return check_mdp(TabularMDP(P, R, 1.0, terminal, horizon=4))


def figure1_policy() -> Policy:
    """Uniform at A; elsewhere actions are irrelevant, so action 0 is taken."""
    probs = np.zeros((5, 2))
    probs[:, 0] = 1.0
    probs[A_] = 0.5
    return Policy(probs)


class CounterexampleError(AssertionError):
    pass


def check_figure1(mdp: TabularMDP, policy: Policy) -> None:
    """Assert the structural and variance facts the counterexample must show."""
    from .analysis import exact_moments
    from .estimators import DELTA_HCA, HCA, MC, EstimatorInputs, hca_advantage
    from .exact_oracle import build_oracle
    from .trajectories import enumerate_trajectories

    oracle = build_oracle(mdp, policy, 3)
    trajs = enumerate_trajectories(mdp, policy, A_, mdp.horizon)
    facts = {
        "two equally likely paths": len(trajs) == 2 and all(w.probability == 0.5 for w in trajs),
        "zero total reward on both paths": all(sum(w.trajectory.rewards) == 0.0 for w in trajs),
        "first-step reward independent of the action": oracle.r_sa[A_, 0] == oracle.r_sa[A_, 1],
        "B and C reveal the action": (np.array_equal(oracle.hindsight[1, A_, B_], [1.0, 0.0])
                                      and np.array_equal(oracle.hindsight[1, A_, C_], [0.0, 1.0])),
        "D does not reveal the action": np.allclose(oracle.hindsight[2, A_, D_], [0.5, 0.5]),
    }
    inputs = EstimatorInputs(policy, oracle.v, oracle, N=3, gamma=mdp.discount)
    for w in trajs:
        a0 = w.trajectory.action(0)
        expected = np.where(np.arange(2) == a0, 1.0, -1.0)
        facts.setdefault("HCA is +1 for the taken action and -1 otherwise", True)
        if not np.allclose(hca_advantage(w.trajectory, 0, inputs).per_action, expected, atol=1e-12):
            facts["HCA is +1 for the taken action and -1 otherwise"] = False
    var = {tag: exact_moments(mdp, policy, A_, inputs, tag).variance for tag in (MC, HCA, DELTA_HCA)}
    facts["MC has zero variance"] = np.allclose(var[MC], 0.0, atol=1e-12)
    facts["HCA has unit variance"] = np.allclose(var[HCA], 1.0, atol=1e-12)
    failed = [name for name, ok in facts.items() if not ok]
    if failed:
        raise CounterexampleError("counterexample reconstruction broken: " + ", ".join(failed))


def figure1_mdp(check: bool = True):
    """The five-state counterexample where reward-HCA is noisier than MC.

    Returns ``(mdp, policy)``. States are A, B, C, D, T (indices 0..4).
    """
    mdp, policy = _figure1_model(), figure1_policy()
    if check:
        check_figure1(mdp, policy)
    return mdp, policy


def figure1_fixture() -> TabularMDP:
    """The committed ``figure1.json`` fixture."""
    with resources.as_file(resources.files("hcalab") / "data" / "figure1.json") as path:
        return load_mdp(path)


def chain_mdp(length: int, slip: float, reward_at_end: float, gamma: float,
              horizon: int) -> TabularMDP:
    """Positions ``0..length-1``; the last one is terminal.

    Action 0 steps back (clamped at 0), action 1 steps forward. With
    probability ``slip`` the action is ignored and the step direction is a fair
    coin. Entering the terminal position pays ``reward_at_end``.
    """
    if length < 2:
        raise ValueError("chain length must be at least 2")
    if not 0.0 <= slip < 1.0:
        raise ValueError("slip must lie in [0, 1)")
    S, end = length, length - 1
    P = np.zeros((S, 2, S))
    R = np.zeros((S, 2, S))
    for s in range(end):
        back, fwd = max(s - 1, 0), s + 1
        for a, (hit, miss) in enumerate(((back, fwd), (fwd, back))):
            P[s, a, hit] += 1.0 - slip / 2.0
            P[s, a, miss] += slip / 2.0
        R[s, :, end] = reward_at_end
    P[end, :, end] = 1.0
    R[end] = 0.0
    terminal = np.zeros(S, dtype=bool)
    terminal[end] = True
    return check_mdp(TabularMDP(P, R, gamma, terminal, horizon))


@dataclass(frozen=True)
class RandomMdpConfig:
    num_states: int = 5
    num_actions: int = 2
    branching: int = 2
    reward_scale: float = 1.0
    terminal_mass: float = 0.2
    discount: float = 1.0
    horizon: int = 5
    seed: int = 0
    max_states: int = 64


def random_mdp(config: RandomMdpConfig) -> TabularMDP:
    """Random MDP whose last state is terminal.

    Each non-terminal ``(s, a)`` row puts ``terminal_mass`` on the terminal state
    and spreads the rest with flat Dirichlet weights over ``branching``
    distinct non-terminal targets. Rewards are uniform in ``[-scale, scale]``.
    """
    c = config
    if not 2 <= c.num_states <= c.max_states:
        raise ValueError(f"num_states must lie in [2, {c.max_states}]")
    if c.num_actions < 1:
        raise ValueError("num_actions must be positive")
    live = c.num_states - 1
    if not 1 <= c.branching <= live:
        raise ValueError(f"branching {c.branching} impossible with {live} non-terminal states")
    if not 0.0 <= c.terminal_mass <= 1.0:
        raise ValueError("terminal_mass must lie in [0, 1]")
    if c.discount == 1.0 and c.terminal_mass == 0.0:
        raise ValueError("undiscounted instances need positive terminal mass to terminate")
    rng = np.random.default_rng(c.seed)
    S, A = c.num_states, c.num_actions
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    for s in range(live):
        for a in range(A):
            targets = rng.choice(live, size=c.branching, replace=False)
            P[s, a, targets] = rng.dirichlet(np.ones(c.branching)) * (1.0 - c.terminal_mass)
            P[s, a, live] += c.terminal_mass
            P[s, a] /= P[s, a].sum()
            R[s, a] = rng.uniform(-c.reward_scale, c.reward_scale, size=S)
    P[live, :, live] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[live] = True
    return check_mdp(TabularMDP(P, R, c.discount, terminal, c.horizon))


def random_softmax_params(num_states: int, num_actions: int, seed: int,
                          scale: float = 1.0) -> SoftmaxPolicy:
    rng = np.random.default_rng(seed)
    return SoftmaxPolicy(rng.normal(0.0, scale, size=(num_states, num_actions)))


def random_value(mdp: TabularMDP, seed: int, scale: float = 2.0) -> ValueFunction:
    rng = np.random.default_rng(seed)
    return ValueFunction.for_mdp(mdp, rng.uniform(-scale, scale, size=mdp.num_states))


@dataclass(frozen=True, eq=False)
class Instance:
    name: str
    mdp: TabularMDP
    params: SoftmaxPolicy
    policy: Policy


def benchmark_instances(count: int = 50, seed: int = 0, max_states: int = 6,
                        actions=(2, 3), horizon: int = 5):
    """Seeded family of small random MDPs with softmax policies of full support."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        cfg = RandomMdpConfig(
            num_states=int(rng.integers(3, max_states + 1)),
            num_actions=int(rng.choice(actions)),
            branching=2,
            reward_scale=1.0,
            terminal_mass=float(rng.uniform(0.1, 0.4)),
            discount=float(rng.choice([1.0, 0.9])),
            horizon=horizon,
            seed=int(rng.integers(2**31)),
        )
        mdp = random_mdp(cfg)
        params = random_softmax_params(mdp.num_states, mdp.num_actions, int(rng.integers(2**31)))
        out.append(Instance(f"random-{seed}-{i}", mdp, params, softmax_policy(params)))
    return out

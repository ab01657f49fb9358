import numpy as np
import pytest

from hcalab.environments import (RandomMdpConfig, benchmark_instances, figure1_mdp, random_mdp,
                                 random_softmax_params)
from hcalab.exact_oracle import build_oracle
from hcalab.mdp_core import softmax_policy
from hcalab.trajectories import Trajectory

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def figure1():
    return figure1_mdp()


@pytest.fixture(scope="session")
def figure1_oracle(figure1):
    mdp, policy = figure1
    return build_oracle(mdp, policy, 3)


@pytest.fixture(scope="session")
def instances():
    return benchmark_instances(50, seed=0)


def small_random(seed, num_states=4, num_actions=2, discount=1.0, horizon=5, terminal_mass=0.25):
    mdp = random_mdp(RandomMdpConfig(num_states=num_states, num_actions=num_actions, branching=2,
                                     terminal_mass=terminal_mass, discount=discount,
                                     horizon=horizon, seed=seed))
    params = random_softmax_params(num_states, num_actions, seed + 1000)
    return mdp, params, softmax_policy(params)


def brute_force(mdp, policy, s0, depth):
    """Recursive listing of (probability, Trajectory); independent of enumerate_batch."""
    out = []

    def rec(prob, state, acts, rews, nxt):
        if len(acts) == depth or mdp.terminal[state]:
            out.append((prob, Trajectory(s0, tuple(acts), tuple(rews), tuple(nxt),
                                         bool(mdp.terminal[state]))))
            return
        for a in range(mdp.num_actions):
            pa = policy.probs[state, a]
            if pa == 0:
                continue
            for s2 in range(mdp.num_states):
                pt = mdp.transition[state, a, s2]
                if pt == 0:
                    continue
                rec(prob * pa * pt, s2, acts + [a], rews + [float(mdp.reward[state, a, s2])],
                    nxt + [s2])

    rec(1.0, s0, [], [], [])
    return out


def brute_kstep(mdp, policy, s0, depth):
    """p_k(s'|s0, a) by summing brute-force path probabilities."""
    joint = np.zeros((depth + 1, mdp.num_actions, mdp.num_states))
    for prob, tr in brute_force(mdp, policy, s0, depth):
        a0 = tr.action(0)
        if a0 < 0:
            continue
        for k in range(depth + 1):
            joint[k, a0, tr.state(k)] += prob / policy.probs[s0, a0]
    return joint

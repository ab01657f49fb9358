"""Monte-Carlo, HCA and delta-HCA advantage estimators.

Each estimator returns the full vector over actions. The per-trajectory
functions are the literal definitions; the ``*_batch`` variants evaluate the
same formulas over a :class:`TrajectoryBatch` and are what the analysis code
uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exact_oracle import OracleBundle, UnreachableError
from .mdp_core import Policy, ValueFunction
from .trajectories import Trajectory, TrajectoryBatch, td_errors_batch

MC = "MC"
HCA = "HCA"
DELTA_HCA = "DELTA_HCA"
ESTIMATORS = (MC, HCA, DELTA_HCA)


class ZeroProbabilityActionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EstimatorInputs:
    policy: Policy
    v_hat: ValueFunction
    oracle: OracleBundle
    N: int
    gamma: float
    K: Optional[int] = None  # HCA reward-sum cutoff, defaults to N

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.K is not None and self.K < 1:
            raise ValueError("K must be at least 1")

    @property
    def hca_cutoff(self) -> int:
        return self.N if self.K is None else self.K

    def replace(self, **changes) -> "EstimatorInputs":
        fields = dict(policy=self.policy, v_hat=self.v_hat, oracle=self.oracle,
                      N=self.N, gamma=self.gamma, K=self.K)
        fields.update(changes)
        return EstimatorInputs(**fields)


@dataclass(frozen=True, eq=False)
class AdvantageEstimate:
    per_action: np.ndarray
    t: int
    estimator_tag: str


def _check_t(traj: Trajectory, t: int):
    if not 0 <= t < traj.effective_length:
        raise IndexError(f"t={t} outside [0, {traj.effective_length})")


def _ratio_policy(pi_row: np.ndarray, s: int) -> np.ndarray:
    if np.any(pi_row <= 0):
        zero = np.flatnonzero(pi_row <= 0).tolist()
        raise ZeroProbabilityActionError(
            f"pi(a|{s}) = 0 for actions {zero}; the hindsight ratio is undefined")
    return pi_row


def _lookup(oracle: OracleBundle, k: int, s: int, s_next: int) -> np.ndarray:
    if k > oracle.max_k:
        raise ValueError(f"hindsight table covers k <= {oracle.max_k}, asked for k={k}")
    if not oracle.reachable[k, s, s_next]:
        raise UnreachableError(f"unreachable conditioning event: S_t={s}, S_t+{k}={s_next}")
    return oracle.hindsight[k, s, s_next]


def _traj_deltas(traj: Trajectory, t: int, n: int, v_hat, gamma) -> list:
    v = v_hat.values
    out = []
    for k in range(n):
        i = t + k
        if i >= traj.effective_length:
            traj.state(i + 1)  # raises if the horizon, not absorption, ended the trajectory
            out.append(0.0)
        else:
            out.append(traj.reward(i + 1) + gamma * v[traj.state(i + 1)] - v[traj.state(i)])
    return out


def mc_advantage(traj: Trajectory, t: int, inputs: EstimatorInputs) -> AdvantageEstimate:
    _check_t(traj, t)
    pi = inputs.policy.probs
    s, a = traj.state(t), traj.action(t)
    deltas = _traj_deltas(traj, t, inputs.N, inputs.v_hat, inputs.gamma)
    G = deltas[0]
    for k in range(1, inputs.N):
        G += inputs.gamma ** k * deltas[k]
    out = np.zeros(pi.shape[1])
    out[a] = G / pi[s, a]
    return AdvantageEstimate(out, t, MC)


def delta_hca_advantage(traj: Trajectory, t: int, inputs: EstimatorInputs) -> AdvantageEstimate:
    _check_t(traj, t)
    s, a = traj.state(t), traj.action(t)
    pi_s = _ratio_policy(inputs.policy.probs[s], s)
    deltas = _traj_deltas(traj, t, inputs.N, inputs.v_hat, inputs.gamma)
    out = np.zeros(pi_s.size)
    out[a] = deltas[0] / pi_s[a]
    for k in range(1, inputs.N):
        h = _lookup(inputs.oracle, k, s, traj.state(t + k))
        out = out + inputs.gamma ** k * (h / pi_s) * deltas[k]
    return AdvantageEstimate(out, t, DELTA_HCA)


def hca_advantage(traj: Trajectory, t: int, inputs: EstimatorInputs,
                  K: Optional[int] = None) -> AdvantageEstimate:
    """Reward-based HCA; ``R_{t+k}`` is the reward received on arrival at ``S_{t+k}``."""
    _check_t(traj, t)
    K = inputs.hca_cutoff if K is None else K
    s = traj.state(t)
    pi_s = _ratio_policy(inputs.policy.probs[s], s)
    o = inputs.oracle
    out = o.r_sa[s] - o.r_s[s]
    remaining = traj.effective_length - t
    for k in range(1, K + 1):
        if k > remaining:
            traj.state(t + k)  # horizon check
            break
        h = _lookup(o, k, s, traj.state(t + k))
        out = out + inputs.gamma ** k * (h / pi_s - 1.0) * traj.reward(t + k)
    return AdvantageEstimate(np.asarray(out, dtype=np.float64), t, HCA)


def estimate(tag: str, traj: Trajectory, t: int, inputs: EstimatorInputs) -> AdvantageEstimate:
    if tag == MC:
        return mc_advantage(traj, t, inputs)
    if tag == HCA:
        return hca_advantage(traj, t, inputs)
    if tag == DELTA_HCA:
        return delta_hca_advantage(traj, t, inputs)
    raise ValueError(f"unknown estimator {tag!r}")


# Batched evaluation -------------------------------------------------------

def _batch_setup(batch: TrajectoryBatch, t: int):
    if np.any(batch.lengths <= t):
        raise IndexError(f"t={t} is at or past the end of some trajectories")
    return batch.states[:, t], batch.actions[:, t]


def _padded_deltas(batch, t, n, inputs):
    batch.require_depth(t + n)
    delta = td_errors_batch(batch, inputs.v_hat, inputs.gamma)
    if t + n > delta.shape[1]:
        delta = np.pad(delta, ((0, 0), (0, t + n - delta.shape[1])))
    return delta[:, t:t + n]


def _batch_lookup(oracle, k, s, s_next):
    if k > oracle.max_k:
        raise ValueError(f"hindsight table covers k <= {oracle.max_k}, asked for k={k}")
    if not np.all(oracle.reachable[k, s, s_next]):
        raise UnreachableError(f"unreachable conditioning event at k={k}")
    return oracle.hindsight[k, s, s_next]


def _batch_ratio_policy(pi, s):
    rows = pi[s]
    if np.any(rows <= 0):
        raise ZeroProbabilityActionError(
            "pi(a|S_t) = 0 for some action; the hindsight ratio is undefined")
    return rows


def mc_terms_batch(batch, t, inputs):
    """Per-term weights ``[n, N, A]`` and TD errors ``[n, N]`` of the MC estimator."""
    s, a = _batch_setup(batch, t)
    pi = inputs.policy.probs
    deltas = _padded_deltas(batch, t, inputs.N, inputs)
    ind = np.zeros((len(batch), pi.shape[1]))
    ind[np.arange(len(batch)), a] = 1.0 / pi[s, a]
    weights = np.repeat(ind[:, None, :], inputs.N, axis=1)
    return weights, deltas


def delta_hca_terms_batch(batch, t, inputs):
    """Per-term weights ``[n, N, A]`` and TD errors ``[n, N]`` of delta-HCA."""
    s, a = _batch_setup(batch, t)
    pi_s = _batch_ratio_policy(inputs.policy.probs, s)
    deltas = _padded_deltas(batch, t, inputs.N, inputs)
    n, A = len(batch), pi_s.shape[1]
    weights = np.zeros((n, inputs.N, A))
    weights[np.arange(n), 0, a] = 1.0 / pi_s[np.arange(n), a]
    for k in range(1, inputs.N):
        weights[:, k] = _batch_lookup(inputs.oracle, k, s, batch.state_at(t + k)) / pi_s
    return weights, deltas


def mc_advantage_batch(batch: TrajectoryBatch, t: int, inputs: EstimatorInputs) -> np.ndarray:
    s, a = _batch_setup(batch, t)
    pi = inputs.policy.probs
    deltas = _padded_deltas(batch, t, inputs.N, inputs)
    G = deltas[:, 0].copy()
    for k in range(1, inputs.N):
        G += inputs.gamma ** k * deltas[:, k]
    out = np.zeros((len(batch), pi.shape[1]))
    rows = np.arange(len(batch))
    out[rows, a] = G / pi[s, a]
    return out


def delta_hca_advantage_batch(batch: TrajectoryBatch, t: int, inputs: EstimatorInputs) -> np.ndarray:
    s, a = _batch_setup(batch, t)
    pi_s = _batch_ratio_policy(inputs.policy.probs, s)
    deltas = _padded_deltas(batch, t, inputs.N, inputs)
    rows = np.arange(len(batch))
    out = np.zeros(pi_s.shape)
    out[rows, a] = deltas[:, 0] / pi_s[rows, a]
    for k in range(1, inputs.N):
        h = _batch_lookup(inputs.oracle, k, s, batch.state_at(t + k))
        out = out + inputs.gamma ** k * (h / pi_s) * deltas[:, k, None]
    return out


def hca_advantage_batch(batch: TrajectoryBatch, t: int, inputs: EstimatorInputs,
                        K: Optional[int] = None) -> np.ndarray:
    K = inputs.hca_cutoff if K is None else K
    s, _ = _batch_setup(batch, t)
    pi_s = _batch_ratio_policy(inputs.policy.probs, s)
    batch.require_depth(t + K)
    o = inputs.oracle
    out = o.r_sa[s] - o.r_s[s][:, None]
    for k in range(1, K + 1):
        if t + k > batch.depth:
            break  # every row is absorbed here: rewards are zero
        h = _batch_lookup(o, k, s, batch.state_at(t + k))
        out = out + inputs.gamma ** k * (h / pi_s - 1.0) * batch.reward_at(t + k)[:, None]
    return out


def estimate_batch(tag: str, batch: TrajectoryBatch, t: int, inputs: EstimatorInputs) -> np.ndarray:
    if tag == MC:
        return mc_advantage_batch(batch, t, inputs)
    if tag == HCA:
        return hca_advantage_batch(batch, t, inputs)
    if tag == DELTA_HCA:
        return delta_hca_advantage_batch(batch, t, inputs)
    raise ValueError(f"unknown estimator {tag!r}")


def lookahead(tag: str, inputs: EstimatorInputs) -> int:
    """Number of steps past ``t`` an estimator reads."""
    return inputs.hca_cutoff if tag == HCA else inputs.N

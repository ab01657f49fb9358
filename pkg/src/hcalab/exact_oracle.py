"""Ground-truth quantities computed from the model.

k-step tensors are indexed directly by ``k``; slot ``k = 0`` holds the
identity (``S_t`` itself) so that ``kstep_joint[k]`` reads naturally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp_core import Policy, TabularMDP, ValueFunction, _frozen

REACHABLE_TOL = 1e-15
RESIDUAL_TOL = 1e-10


class UnreachableError(LookupError):
    """A hindsight probability was requested for a zero-probability event."""


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class OracleBundle:
    policy: Policy
    v: ValueFunction
    q: np.ndarray  # [s, a]
    adv: np.ndarray  # [s, a]
    r_sa: np.ndarray  # [s, a]
    r_s: np.ndarray  # [s]
    kstep_joint: np.ndarray  # [k, s, a, s'], k = 0..N
    kstep_marginal: np.ndarray  # [k, s, s']
    hindsight: np.ndarray  # [k, s, s', a]
    reachable: np.ndarray  # [k, s, s'] bool

    def __post_init__(self):
        for name in ("q", "adv", "r_sa", "r_s", "kstep_joint", "kstep_marginal", "hindsight"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "reachable", _frozen(self.reachable, dtype=bool))

    @property
    def max_k(self) -> int:
        return self.kstep_joint.shape[0] - 1

    def hindsight_prob(self, k: int, s: int, s_next: int, a: int) -> float:
        if not self.reachable[k, s, s_next]:
            raise UnreachableError(
                f"unreachable conditioning event: S_t={s}, S_t+{k}={s_next}")
        return float(self.hindsight[k, s, s_next, a])

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.probs.tolist(),
            "v": self.v.values.tolist(),
            "q": self.q.tolist(),
            "adv": self.adv.tolist(),
            "r_sa": self.r_sa.tolist(),
            "r_s": self.r_s.tolist(),
            "kstep_joint": self.kstep_joint.tolist(),
            "kstep_marginal": self.kstep_marginal.tolist(),
            "hindsight": self._masked_hindsight(),
            "reachable": self.reachable.tolist(),
        }

    def _masked_hindsight(self):
        # masked slots are not meaningful; export them as null
        out = self.hindsight.tolist()
        for k, s, s2 in np.argwhere(~self.reachable):
            out[k][s][s2] = None
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "OracleBundle":
        A = len(doc["policy"][0])
        hs = np.array([[[[0.0] * A if row is None else row for row in m] for m in k]
                       for k in doc["hindsight"]], dtype=np.float64)
        return cls(
            policy=Policy(doc["policy"]),
            v=ValueFunction(doc["v"]),
            q=doc["q"], adv=doc["adv"], r_sa=doc["r_sa"], r_s=doc["r_s"],
            kstep_joint=doc["kstep_joint"], kstep_marginal=doc["kstep_marginal"],
            hindsight=hs, reachable=doc["reachable"],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "OracleBundle":
        return cls.from_dict(json.loads(Path(path).read_text()))


def expected_rewards(mdp: TabularMDP, policy: Policy):
    r_sa = np.einsum("sat,sat->sa", mdp.transition, mdp.reward)
    r_sa[mdp.terminal] = 0.0
    r_s = np.einsum("sa,sa->s", policy.probs, r_sa)
    return r_sa, r_s


def policy_matrices(mdp: TabularMDP, policy: Policy):
    """Policy-averaged transition matrix and expected one-step reward."""
    P = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    _, r = expected_rewards(mdp, policy)
    return P, r


def bellman_residuals(mdp: TabularMDP, policy: Policy, v_hat: ValueFunction) -> np.ndarray:
    """E[delta_t | S_t = s] for every state."""
    P, r = policy_matrices(mdp, policy)
    v = v_hat.values
    return r + mdp.discount * P @ v - v


def bellman_residual(mdp: TabularMDP, policy: Policy, v_hat: ValueFunction) -> float:
    return float(np.max(np.abs(bellman_residuals(mdp, policy, v_hat))))


def solve_value(mdp: TabularMDP, policy: Policy) -> ValueFunction:
    P, r = policy_matrices(mdp, policy)
    live = np.flatnonzero(~mdp.terminal)
    v = np.zeros(mdp.num_states)
    if live.size == 0:
        return ValueFunction(v)
    M = np.eye(live.size) - mdp.discount * P[np.ix_(live, live)]
    b = r[live]
    if np.linalg.cond(M) > 1e12:
        raise SingularSystemError(
            "policy evaluation system is singular; the MDP does not terminate under this policy")
    x = np.linalg.solve(M, b)
    for _ in range(3):
        # iterative refinement
        x = x + np.linalg.solve(M, b - M @ x)
    v[live] = x
    return ValueFunction(v)


def q_and_advantage(mdp: TabularMDP, policy: Policy, v: ValueFunction):
    target = mdp.reward + mdp.discount * v.values[None, None, :]
    q = np.einsum("sat,sat->sa", mdp.transition, target)
    q[mdp.terminal] = 0.0
    adv = q - v.values[:, None]
    return q, adv


def kstep_distributions(mdp: TabularMDP, policy: Policy, N: int):
    """p_k(s'|s,a) and p_k(s'|s) for k = 0..N (slot 0 is the identity)."""
    if N < 1:
        raise ValueError("N must be positive")
    if N > mdp.horizon:
        raise ValueError(f"N={N} exceeds the MDP horizon {mdp.horizon}")
    S, A = mdp.num_states, mdp.num_actions
    P, _ = policy_matrices(mdp, policy)
    joint = np.zeros((N + 1, S, A, S))
    joint[0] = np.eye(S)[:, None, :]
    joint[1] = mdp.transition
    for k in range(2, N + 1):
        joint[k] = joint[k - 1] @ P
    marginal = np.einsum("sa,ksat->kst", policy.probs, joint)
    return joint, marginal


def hindsight_probabilities(kstep_joint, kstep_marginal, policy: Policy):
    """p_k(a|s,s') via Bayes' rule, plus a reachability mask."""
    reachable = kstep_marginal > REACHABLE_TOL
    numer = policy.probs[None, :, None, :] * np.transpose(kstep_joint, (0, 1, 3, 2))
    denom = np.where(reachable, kstep_marginal, 1.0)[..., None]
    hindsight = np.where(reachable[..., None], numer / denom, 0.0)
    return hindsight, reachable


def build_oracle(mdp: TabularMDP, policy: Policy, N: int) -> OracleBundle:
    r_sa, r_s = expected_rewards(mdp, policy)
    v = solve_value(mdp, policy)
    q, adv = q_and_advantage(mdp, policy, v)
    joint, marginal = kstep_distributions(mdp, policy, N)
    hindsight, reachable = hindsight_probabilities(joint, marginal, policy)
    return OracleBundle(policy=policy, v=v, q=q, adv=adv, r_sa=r_sa, r_s=r_s,
                        kstep_joint=joint, kstep_marginal=marginal,
                        hindsight=hindsight, reachable=reachable)


def bayes_violations(bundle: OracleBundle, tol: float = 1e-12):
    """Reachable (k, s, s', a) entries where p_k(a|s,s') p_k(s'|s) != pi(a|s) p_k(s'|s,a)."""
    lhs = bundle.hindsight * bundle.kstep_marginal[..., None]
    rhs = bundle.policy.probs[None, :, None, :] * np.transpose(bundle.kstep_joint, (0, 1, 3, 2))
    gap = np.where(bundle.reachable[..., None], np.abs(lhs - rhs), 0.0)
    return [(tuple(int(i) for i in idx), float(gap[tuple(idx)]))
            for idx in np.argwhere(gap > tol)]


def delta_second_moment(mdp: TabularMDP, policy: Policy, v_hat: ValueFunction) -> np.ndarray:
    """E[delta_t^2 | S_t = s] for every state."""
    v = v_hat.values
    d = mdp.reward + mdp.discount * v[None, None, :] - v[:, None, None]
    return np.einsum("sa,sat,sat->s", policy.probs, mdp.transition, d * d)

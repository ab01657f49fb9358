"""Tabular MDPs, policies and value functions.

Rewards are attached to transitions ``(s, a, s')``. Terminal states are
absorbing: they self-loop with probability one and reward zero under every
action, so TD errors vanish after termination.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROW_SUM_TOL = 1e-12


def _frozen(x, dtype=np.float64):
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMDP:
    transition: np.ndarray  # [s, a, s']
    reward: np.ndarray  # [s, a, s']
    discount: float
    terminal: np.ndarray  # [s] bool
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "terminal", _frozen(self.terminal, dtype=bool))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "horizon", int(self.horizon))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "discount": self.discount,
            "horizon": self.horizon,
            "terminal": [bool(t) for t in self.terminal],
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMDP":
        mdp = cls(
            transition=doc["transition"],
            reward=doc["reward"],
            discount=doc["discount"],
            terminal=doc["terminal"],
            horizon=doc["horizon"],
        )
        expected = (doc["num_states"], doc["num_actions"], doc["num_states"])
        if mdp.transition.shape != expected or mdp.reward.shape != expected:
            raise ValueError(
                f"array shapes {mdp.transition.shape}/{mdp.reward.shape} "
                f"do not match declared {expected}")
        if mdp.terminal.shape != (doc["num_states"],):
            raise ValueError("terminal flags do not match num_states")
        return mdp


class InvalidMDPError(ValueError):
    """Raised when an MDP fails validation where a valid one is required."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True, eq=False)
class Policy:
    probs: np.ndarray  # [s, a]

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise ValueError("policy must be a [state, action] matrix")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("policy entries must be finite and non-negative")
        bad = np.flatnonzero(np.abs(probs.sum(axis=1) - 1.0) > ROW_SUM_TOL)
        if bad.size:
            raise ValueError(f"policy rows {bad.tolist()} do not sum to 1")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Policy":
        return cls(doc["probs"])


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    params: np.ndarray  # theta [s, a]

    def __post_init__(self):
        object.__setattr__(self, "params", _frozen(self.params))


@dataclass(frozen=True, eq=False)
class ValueFunction:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    @classmethod
    def for_mdp(cls, mdp: TabularMDP, values) -> "ValueFunction":
        """Build a value function with terminal entries forced to zero."""
        v = np.array(values, dtype=np.float64)
        v[mdp.terminal] = 0.0
        return cls(v)


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _trapping_states(mdp: TabularMDP) -> np.ndarray:
    """States from which some action choice avoids termination forever.

    Greatest fixed point: a non-terminal state stays in the set while at least
    one of its actions keeps all successor mass inside the set.
    """
    inside = ~mdp.terminal.copy()
    support = mdp.transition > 0
    while True:
        keeps = ~np.any(support & ~inside[None, None, :], axis=2)  # [s, a]
        new = inside & keeps.any(axis=1)
        if np.array_equal(new, inside):
            return np.flatnonzero(inside)
        inside = new


def validate_mdp(mdp: TabularMDP) -> ValidationReport:
    report = ValidationReport()
    v = report.violations
    S, A = mdp.num_states, mdp.num_actions
    if mdp.transition.shape != (S, A, S):
        v.append(f"transition shape {mdp.transition.shape} is not (S, A, S)")
        return report
    if mdp.reward.shape != (S, A, S):
        v.append(f"reward shape {mdp.reward.shape} is not (S, A, S)")
        return report
    if mdp.terminal.shape != (S,):
        v.append("terminal flags must have one entry per state")
        return report
    if not 0.0 < mdp.discount <= 1.0:
        v.append(f"discount {mdp.discount} outside (0, 1]")
    if mdp.horizon < 1:
        v.append(f"horizon {mdp.horizon} must be positive")
    if not np.all(np.isfinite(mdp.reward)):
        for s, a, s2 in np.argwhere(~np.isfinite(mdp.reward)):
            v.append(f"non-finite reward at ({s}, {a}, {s2})")
    if np.any(mdp.transition < 0) or not np.all(np.isfinite(mdp.transition)):
        for s, a, s2 in np.argwhere(~(mdp.transition >= 0)):
            v.append(f"negative or non-finite transition probability at ({s}, {a}, {s2})")
    sums = mdp.transition.sum(axis=2)
    for s in range(S):
        if mdp.terminal[s]:
            for a in range(A):
                if mdp.transition[s, a, s] != 1.0 or np.any(mdp.reward[s, a] != 0.0):
                    v.append(f"terminal state {s} is not absorbing with zero reward under action {a}")
            continue
        for a in range(A):
            if abs(sums[s, a] - 1.0) > ROW_SUM_TOL:
                v.append(f"transition row ({s}, {a}) sums to {sums[s, a]!r}")
    if mdp.discount == 1.0 and not v:
        trapped = _trapping_states(mdp)
        if trapped.size:
            v.append(f"non-terminating under discount 1: states {trapped.tolist()} "
                     "can avoid every terminal state")
    return report


def check_mdp(mdp: TabularMDP) -> TabularMDP:
    report = validate_mdp(mdp)
    if not report.ok:
        raise InvalidMDPError(report.violations)
    return mdp


def softmax_policy(params: SoftmaxPolicy) -> Policy:
    theta = params.params
    bad = np.argwhere(~np.isfinite(theta))
    if bad.size:
        raise ValueError(f"non-finite softmax parameter at {tuple(bad[0].tolist())}")
    z = np.exp(theta - theta.max(axis=1, keepdims=True))
    probs = z / z.sum(axis=1, keepdims=True)
    return Policy(probs)


def softmax_gradient(params: SoftmaxPolicy, s: int, a: int) -> np.ndarray:
    """Gradient of pi(a|s) with respect to theta; only row ``s`` is nonzero."""
    S, A = params.params.shape
    if not (0 <= s < S and 0 <= a < A):
        raise IndexError(f"(state, action) = ({s}, {a}) out of range for {S}x{A} parameters")
    pi = softmax_policy(params).probs[s]
    grad = np.zeros((S, A))
    grad[s] = pi[a] * ((np.arange(A) == a) - pi)
    return grad


def save_mdp(mdp: TabularMDP, path) -> None:
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=1))


def load_mdp(path) -> TabularMDP:
    return TabularMDP.from_dict(json.loads(Path(path).read_text()))

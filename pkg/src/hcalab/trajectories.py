"""Trajectory sampling, exhaustive enumeration and TD errors.

A trajectory stops at the first terminal state (or at the horizon). Past
absorption the accessors keep returning the terminal state with zero reward,
so estimator code never has to special-case the end of an episode.

Batches store trajectories as padded arrays: ``states`` is ``[n, H + 1]``,
``actions`` and ``rewards`` are ``[n, H]``. Padding repeats the terminal
state, uses action ``-1`` and reward ``0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .mdp_core import Policy, TabularMDP, ValueFunction
from .rng import uniform_pair

ENUMERATION_CAP = 10**7


class EnumerationCapError(RuntimeError):
    pass


class TrajectoryTooShortError(IndexError):
    """The horizon cut a trajectory before the requested look-ahead."""


@dataclass(frozen=True)
class Trajectory:
    start_state: int
    actions: tuple
    rewards: tuple
    next_states: tuple
    absorbed: bool

    @property
    def steps(self):
        return list(zip(self.actions, self.rewards, self.next_states))

    @property
    def effective_length(self) -> int:
        return len(self.actions)

    def state(self, i: int) -> int:
        """S_i, the state after ``i`` steps."""
        if i == 0:
            return self.start_state
        if i <= len(self.next_states):
            return self.next_states[i - 1]
        self._check_padded(i)
        return self.next_states[-1] if self.next_states else self.start_state

    def action(self, i: int) -> int:
        if i < len(self.actions):
            return self.actions[i]
        self._check_padded(i)
        return -1

    def reward(self, i: int) -> float:
        """R_i, the reward received on arrival at S_i (``i >= 1``)."""
        if i < 1:
            raise IndexError("rewards are indexed from 1")
        if i <= len(self.rewards):
            return self.rewards[i - 1]
        self._check_padded(i)
        return 0.0

    def _check_padded(self, i):
        if not self.absorbed:
            raise TrajectoryTooShortError(
                f"index {i} lies beyond the horizon of a trajectory of length {len(self.actions)}")

    def to_json(self, prob: Optional[float] = None) -> str:
        doc = {"start": self.start_state,
               "steps": [[a, r, s] for a, r, s in self.steps]}
        if prob is not None:
            doc["prob"] = prob
        return json.dumps(doc)


@dataclass(frozen=True)
class WeightedTrajectory:
    trajectory: Trajectory
    probability: float


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    lengths: np.ndarray
    absorbed: np.ndarray
    probs: Optional[np.ndarray] = None

    def __len__(self):
        return self.states.shape[0]

    @property
    def depth(self) -> int:
        return self.actions.shape[1]

    def trajectory(self, i: int) -> Trajectory:
        L = int(self.lengths[i])
        return Trajectory(
            start_state=int(self.states[i, 0]),
            actions=tuple(int(a) for a in self.actions[i, :L]),
            rewards=tuple(float(r) for r in self.rewards[i, :L]),
            next_states=tuple(int(s) for s in self.states[i, 1:L + 1]),
            absorbed=bool(self.absorbed[i]),
        )

    def __iter__(self):
        return (self.trajectory(i) for i in range(len(self)))

    def require_depth(self, upto: int) -> None:
        """Ensure every row knows S_upto (directly or by absorption)."""
        if upto > self.depth and not np.all(self.absorbed):
            raise TrajectoryTooShortError(
                f"look-ahead to step {upto} exceeds the batch depth {self.depth}")

    def state_at(self, i: int) -> np.ndarray:
        return self.states[:, min(i, self.depth)]

    def reward_at(self, i: int) -> np.ndarray:
        if i > self.depth:
            return np.zeros(len(self))
        return self.rewards[:, i - 1]


def _positive_support_end(p: np.ndarray) -> np.ndarray:
    # index of the last positive entry along the final axis
    pos = p > 0
    return p.shape[-1] - 1 - np.argmax(pos[..., ::-1], axis=-1)


def _draw(cdf: np.ndarray, u: np.ndarray, last: np.ndarray) -> np.ndarray:
    idx = np.sum(cdf <= u[:, None], axis=1)
    return np.minimum(idx, last)


def sample_batch(mdp: TabularMDP, policy: Policy, s0: int, horizon: int, seed: int,
                 n: int, start_index: int = 0) -> TrajectoryBatch:
    """Sample trajectories ``start_index .. start_index + n - 1`` from ``s0``.

    Trajectory ``i`` depends only on ``(seed, i)``, so any slicing of the index
    range reproduces the same trajectories.
    """
    S = mdp.num_states
    idx = np.arange(start_index, start_index + n, dtype=np.uint64)
    states = np.full((n, horizon + 1), s0, dtype=np.int64)
    actions = np.full((n, horizon), -1, dtype=np.int64)
    rewards = np.zeros((n, horizon))
    lengths = np.zeros(n, dtype=np.int64)
    alive = np.full(n, not mdp.terminal[s0])
    pi_cdf = np.cumsum(policy.probs, axis=1)
    pi_last = _positive_support_end(policy.probs)
    t_cdf = np.cumsum(mdp.transition, axis=2)
    t_last = _positive_support_end(mdp.transition)
    for j in range(horizon):
        cur = states[:, j]
        rows = np.flatnonzero(alive)
        if rows.size == 0:
            states[:, j + 1:] = cur[:, None]
            break
        states[:, j + 1] = cur
        u_a, u_s = uniform_pair(seed, idx[rows], j)
        s = cur[rows]
        a = _draw(pi_cdf[s], u_a, pi_last[s])
        s2 = _draw(t_cdf[s, a], u_s, t_last[s, a])
        actions[rows, j] = a
        rewards[rows, j] = mdp.reward[s, a, s2]
        states[rows, j + 1] = s2
        lengths[rows] += 1
        alive[rows] = ~mdp.terminal[s2]
    absorbed = mdp.terminal[states[:, -1]]
    return TrajectoryBatch(states, actions, rewards, lengths, absorbed)


def sample_trajectory(mdp: TabularMDP, policy: Policy, s0: int, horizon: int,
                      seed: int, index: int = 0) -> Trajectory:
    return sample_batch(mdp, policy, s0, horizon, seed, 1, start_index=index).trajectory(0)


def enumerate_batch(mdp: TabularMDP, policy: Policy, s0: int, horizon: int,
                    cap: int = ENUMERATION_CAP) -> TrajectoryBatch:
    """Every positive-probability trajectory from ``s0`` with its exact probability."""
    states = np.array([[s0]], dtype=np.int64)
    actions = np.zeros((1, 0), dtype=np.int64)
    rewards = np.zeros((1, 0))
    probs = np.ones(1)
    lengths = np.zeros(1, dtype=np.int64)
    for _ in range(horizon):
        cur = states[:, -1]
        alive = ~mdp.terminal[cur]
        branch = policy.probs[cur][:, :, None] * mdp.transition[cur]  # [n, a, s']
        branch[~alive] = 0.0
        rows, a, s2 = np.nonzero(branch)
        dead = np.flatnonzero(~alive)
        total = rows.size + dead.size
        if total > cap:
            raise EnumerationCapError(
                f"enumeration from state {s0} needs more than {cap} trajectories; "
                "shrink the instance or the horizon")
        parent = np.concatenate([rows, dead])
        new_a = np.concatenate([a, np.full(dead.size, -1)])
        new_s = np.concatenate([s2, cur[dead]])
        new_r = np.concatenate([mdp.reward[cur[rows], a, s2], np.zeros(dead.size)])
        new_p = np.concatenate([probs[rows] * branch[rows, a, s2], probs[dead]])
        grew = np.concatenate([np.ones(rows.size, dtype=np.int64),
                               np.zeros(dead.size, dtype=np.int64)])
        order = np.argsort(parent, kind="stable")
        parent = parent[order]
        states = np.concatenate([states[parent], new_s[order, None]], axis=1)
        actions = np.concatenate([actions[parent], new_a[order, None]], axis=1)
        rewards = np.concatenate([rewards[parent], new_r[order, None]], axis=1)
        probs = new_p[order]
        lengths = lengths[parent] + grew[order]
    absorbed = mdp.terminal[states[:, -1]]
    return TrajectoryBatch(states, actions, rewards, lengths, absorbed, probs)


def enumerate_trajectories(mdp: TabularMDP, policy: Policy, s0: int, horizon: int,
                           cap: int = ENUMERATION_CAP) -> list:
    batch = enumerate_batch(mdp, policy, s0, horizon, cap)
    return [WeightedTrajectory(batch.trajectory(i), float(batch.probs[i]))
            for i in range(len(batch))]


def td_errors(traj: Trajectory, v_hat: ValueFunction, gamma: float) -> np.ndarray:
    """delta_i = R_{i+1} + gamma V(S_{i+1}) - V(S_i) for each recorded step."""
    v = v_hat.values
    out = np.empty(traj.effective_length)
    for i in range(traj.effective_length):
        out[i] = traj.reward(i + 1) + gamma * v[traj.state(i + 1)] - v[traj.state(i)]
    return out


def td_errors_batch(batch: TrajectoryBatch, v_hat: ValueFunction, gamma: float) -> np.ndarray:
    """``[n, depth]`` TD errors; zero after absorption."""
    v = v_hat.values
    delta = batch.rewards + gamma * v[batch.states[:, 1:]] - v[batch.states[:, :-1]]
    live = np.arange(batch.depth)[None, :] < batch.lengths[:, None]
    return np.where(live, delta, 0.0)


def write_jsonl(path, trajectories) -> None:
    """Dump trajectories (or weighted trajectories) one JSON object per line."""
    with open(path, "w") as fh:
        for item in trajectories:
            if isinstance(item, WeightedTrajectory):
                fh.write(item.trajectory.to_json(item.probability) + "\n")
            else:
                fh.write(item.to_json() + "\n")


def read_jsonl(path, terminal) -> list:
    """Inverse of :func:`write_jsonl`; ``terminal`` flags decide absorption."""
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        steps = doc["steps"]
        last = steps[-1][2] if steps else doc["start"]
        traj = Trajectory(doc["start"], tuple(s[0] for s in steps), tuple(float(s[1]) for s in steps),
                          tuple(s[2] for s in steps), bool(terminal[last]))
        out.append(WeightedTrajectory(traj, doc["prob"]) if "prob" in doc else traj)
    return out

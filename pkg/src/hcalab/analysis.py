"""Exact and empirical moments of the advantage estimators.

Conditioning on ``S_t = s`` is done by enumerating from ``s`` at ``t = 0``;
by the Markov property this is the same as conditioning at any other time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .estimators import (DELTA_HCA, HCA, MC, AdvantageEstimate, EstimatorInputs,
                         delta_hca_terms_batch, estimate_batch, lookahead, mc_terms_batch)
from .exact_oracle import RESIDUAL_TOL, bellman_residual, delta_second_moment
from .mdp_core import Policy, SoftmaxPolicy, TabularMDP, softmax_gradient, softmax_policy
from .trajectories import TrajectoryBatch, enumerate_batch

EXACT = "exact"
EMPIRICAL = "empirical"
THEOREM_TOL = 1e-10


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MomentReport:
    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray
    mode: str
    conditioning: dict = field(default_factory=dict)
    sample_count: Optional[int] = None
    mean_stderr: Optional[np.ndarray] = None
    variance_stderr: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        doc = {"mode": self.mode, "conditioning": self.conditioning,
               "mean": self.mean.tolist(), "variance": self.variance.tolist(),
               "covariance": self.covariance.tolist()}
        if self.mode == EMPIRICAL:
            doc.update(sample_count=self.sample_count,
                       mean_stderr=self.mean_stderr.tolist(),
                       variance_stderr=self.variance_stderr.tolist())
        return doc

    def rows(self, mdp_id=""):
        """Flat records: (mdp_id, s, a, N, estimator, statistic, value, stderr)."""
        c = self.conditioning
        out = []
        for a in range(self.mean.size):
            for stat, vals, errs in (("mean", self.mean, self.mean_stderr),
                                     ("variance", self.variance, self.variance_stderr)):
                out.append((mdp_id, c.get("state"), a, c.get("N"), c.get("estimator"),
                            stat, float(vals[a]), None if errs is None else float(errs[a])))
        return out


def weighted_moments(values: np.ndarray, weights: np.ndarray):
    """Mean vector and covariance matrix of ``values[n, d]`` under ``weights[n]``."""
    mean = weights @ values
    centred = values - mean
    cov = (centred * weights[:, None]).T @ centred
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def _enumerate_for(mdp, policy, s, depth, batch):
    if depth > mdp.horizon:
        raise ValueError(f"estimator look-ahead {depth} exceeds the horizon {mdp.horizon}")
    if batch is None:
        return enumerate_batch(mdp, policy, s, depth)
    if batch.probs is None:
        raise ValueError("exact moments need an enumerated batch with probabilities")
    if int(batch.states[0, 0]) != s:
        raise ValueError("batch was enumerated from a different start state")
    batch.require_depth(depth)
    return batch


def exact_moments(mdp: TabularMDP, policy: Policy, s: int, inputs: EstimatorInputs,
                  estimator_tag: str, batch: Optional[TrajectoryBatch] = None) -> MomentReport:
    batch = _enumerate_for(mdp, policy, s, lookahead(estimator_tag, inputs), batch)
    est = estimate_batch(estimator_tag, batch, 0, inputs)
    mean, cov = weighted_moments(est, batch.probs)
    return MomentReport(mean, np.diag(cov).copy(), cov, EXACT,
                        {"state": s, "t": 0, "N": inputs.N, "estimator": estimator_tag})


def empirical_moments(samples, conditioning: Optional[dict] = None) -> MomentReport:
    """Unbiased sample moments with standard errors.

    ``samples`` is a sequence of :class:`AdvantageEstimate` or an ``[n, A]`` array.
    The variance standard error uses the large-sample formula
    ``sqrt((m4 - s^4) / n)``.
    """
    if isinstance(samples, np.ndarray):
        x = samples
        tag = None
    else:
        samples = list(samples)
        x = np.array([e.per_action for e in samples])
        tag = samples[0].estimator_tag if samples else None
    n = x.shape[0]
    if n < 2:
        raise ValueError("empirical moments need at least 2 samples")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / (n - 1)
    cov = 0.5 * (cov + cov.T)
    var = np.diag(cov).copy()
    m4 = np.mean(centred ** 4, axis=0)
    var_se = np.sqrt(np.maximum(m4 - var ** 2, 0.0) / n)
    cond = dict(conditioning or {})
    if tag is not None:
        cond.setdefault("estimator", tag)
    return MomentReport(mean, var, cov, EMPIRICAL, cond, n, np.sqrt(var / n), var_se)


@dataclass(frozen=True, eq=False)
class DecompositionReport:
    """Per-action split of an estimator's variance into per-term pieces.

    ``per_k_variance[a, k]`` is Var(w_k(a) delta_{t+k}) without discounting,
    ``cross_terms[a, k, j]`` is gamma^(k+j) cov(w_k delta_{t+k}, w_j delta_{t+j})
    for k != j (zero on the diagonal), and
    ``total = sum_k gamma^(2k) per_k_variance + 2 sum_{k<j} cross_terms``.
    """
    per_k_variance: np.ndarray
    cross_terms: np.ndarray
    total: np.ndarray
    direct_variance: np.ndarray
    gamma: float
    estimator_tag: str
    residual: float

    @property
    def lemma_applies(self) -> bool:
        return self.residual <= RESIDUAL_TOL

    @property
    def max_cross(self) -> float:
        return float(np.max(np.abs(self.cross_terms))) if self.cross_terms.size else 0.0

    def to_dict(self) -> dict:
        return {"estimator": self.estimator_tag, "gamma": self.gamma,
                "bellman_residual": self.residual,
                "per_k_variance": self.per_k_variance.tolist(),
                "cross_terms": self.cross_terms.tolist(),
                "total": self.total.tolist(),
                "direct_variance": self.direct_variance.tolist()}


def _terms(tag, batch, inputs):
    if tag == MC:
        return mc_terms_batch(batch, 0, inputs)
    if tag == DELTA_HCA:
        return delta_hca_terms_batch(batch, 0, inputs)
    raise ValueError(f"variance decomposition is defined for TD-error estimators, not {tag!r}")


def variance_decomposition(mdp: TabularMDP, policy: Policy, s: int, inputs: EstimatorInputs,
                           estimator_tag: str,
                           batch: Optional[TrajectoryBatch] = None) -> DecompositionReport:
    batch = _enumerate_for(mdp, policy, s, inputs.N, batch)
    weights, deltas = _terms(estimator_tag, batch, inputs)
    N, A = inputs.N, weights.shape[2]
    g = inputs.gamma
    disc = g ** np.arange(N)
    p = batch.probs
    per_k = np.zeros((A, N))
    cross = np.zeros((A, N, N))
    total = np.zeros(A)
    direct = np.zeros(A)
    for a in range(A):
        X = weights[:, :, a] * deltas  # [n, N] undiscounted terms
        _, cov = weighted_moments(X, p)
        per_k[a] = np.diag(cov)
        dcov = cov * np.outer(disc, disc)
        cross[a] = dcov - np.diag(np.diag(dcov))
        total[a] = np.sum(disc ** 2 * per_k[a]) + 2.0 * np.sum(np.triu(cross[a], 1))
        _, v = weighted_moments((X @ disc)[:, None], p)
        direct[a] = v[0, 0]
    residual = bellman_residual(mdp, inputs.policy, inputs.v_hat)
    return DecompositionReport(per_k, cross, total, direct, g, estimator_tag, residual)


@dataclass(frozen=True, eq=False)
class PerTermComparison:
    """Var of the k-th delta-HCA term against the k-th MC term (k >= 1).

    ``*_enumerated`` come from trajectory enumeration, ``*_closed`` from the
    Bayes-rewritten sums over S_{t+k}. Arrays are ``[A, N]`` with column 0 unused.
    """
    hca_enumerated: np.ndarray
    mc_enumerated: np.ndarray
    hca_closed: np.ndarray
    mc_closed: np.ndarray


def per_term_comparison(mdp, policy, s, inputs, batch=None) -> PerTermComparison:
    if bellman_residual(mdp, inputs.policy, inputs.v_hat) > RESIDUAL_TOL:
        raise PreconditionError("per-term comparison requires the exact value function")
    mc = variance_decomposition(mdp, policy, s, inputs, MC, batch)
    dh = variance_decomposition(mdp, policy, s, inputs, DELTA_HCA, batch)
    o = inputs.oracle
    m2 = delta_second_moment(mdp, inputs.policy, inputs.v_hat)
    pi = inputs.policy.probs[s]
    A, N = pi.size, inputs.N
    hca_closed = np.zeros((A, N))
    mc_closed = np.zeros((A, N))
    for k in range(1, N):
        base = o.kstep_joint[k, s] * m2[None, :] / pi[:, None]  # [a, s']
        mc_closed[:, k] = base.sum(axis=1)
        hca_closed[:, k] = (base * o.hindsight[k, s].T).sum(axis=1)
    return PerTermComparison(dh.per_k_variance, mc.per_k_variance, hca_closed, mc_closed)


@dataclass(frozen=True, eq=False)
class CovarianceCheck:
    mc_covariance: np.ndarray
    mc_closed: np.ndarray
    dhca_covariance: np.ndarray
    dhca_closed: np.ndarray
    tol: float = THEOREM_TOL

    def _offdiag(self, m):
        return m[~np.eye(m.shape[0], dtype=bool)]

    @property
    def mc_matches(self) -> bool:
        return bool(np.all(np.abs(self._offdiag(self.mc_covariance - self.mc_closed)) <= self.tol))

    @property
    def dhca_matches(self) -> bool:
        return bool(np.all(np.abs(self._offdiag(self.dhca_covariance - self.dhca_closed)) <= self.tol))

    @property
    def dhca_dominates(self) -> bool:
        return bool(np.all(self._offdiag(self.dhca_covariance - self.mc_covariance) >= -self.tol))

    @property
    def passed(self) -> bool:
        return self.mc_matches and self.dhca_matches and self.dhca_dominates

    def to_dict(self) -> dict:
        return {"mc_covariance": self.mc_covariance.tolist(), "mc_closed": self.mc_closed.tolist(),
                "dhca_covariance": self.dhca_covariance.tolist(),
                "dhca_closed": self.dhca_closed.tolist(),
                "mc_matches": self.mc_matches, "dhca_matches": self.dhca_matches,
                "dhca_dominates": self.dhca_dominates}


def cross_action_covariance_check(mdp: TabularMDP, policy: Policy, s: int,
                                  inputs: EstimatorInputs,
                                  batch: Optional[TrajectoryBatch] = None) -> CovarianceCheck:
    residual = bellman_residual(mdp, inputs.policy, inputs.v_hat)
    if residual > RESIDUAL_TOL:
        raise PreconditionError(
            f"cross-action identities need the exact value function; Bellman residual {residual:.3e}")
    batch = _enumerate_for(mdp, policy, s, inputs.N, batch)
    mc = exact_moments(mdp, policy, s, inputs, MC, batch)
    dh = exact_moments(mdp, policy, s, inputs, DELTA_HCA, batch)
    o = inputs.oracle
    adv = o.adv[s]
    mc_closed = -np.outer(adv, adv)
    m2 = delta_second_moment(mdp, inputs.policy, inputs.v_hat)
    pi = inputs.policy.probs[s]
    dh_closed = -np.outer(adv, adv)
    for k in range(1, inputs.N):
        ratio = o.hindsight[k, s] / pi[None, :]  # [s', a]
        w = o.kstep_marginal[k, s] * m2 * o.reachable[k, s]
        dh_closed = dh_closed + inputs.gamma ** (2 * k) * (ratio * w[:, None]).T @ ratio
    return CovarianceCheck(mc.covariance, mc_closed, dh.covariance, dh_closed)


@dataclass(frozen=True, eq=False)
class PGConfig:
    step_size: float
    params: SoftmaxPolicy

    def __post_init__(self):
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ValueError("step size must be finite and positive")


@dataclass(frozen=True, eq=False)
class UpdateVarianceReport:
    """Variance of the all-actions update sum_a A_hat(a) grad pi(a|s)."""
    per_coordinate_variance: np.ndarray  # direct enumeration
    assembled_variance: np.ndarray  # variance part + covariance part
    variance_part: np.ndarray
    covariance_part: np.ndarray
    step_size: float
    estimator_tag: str

    @property
    def total_trace(self) -> float:
        return float(self.per_coordinate_variance.sum())

    @property
    def step_trace(self) -> float:
        """Trace of the variance of the parameter step alpha * update."""
        return self.step_size ** 2 * self.total_trace

    def to_dict(self) -> dict:
        return {"estimator": self.estimator_tag, "total_trace": self.total_trace,
                "step_trace": self.step_trace,
                "per_coordinate_variance": self.per_coordinate_variance.tolist(),
                "assembled_variance": self.assembled_variance.tolist(),
                "variance_part": self.variance_part.tolist(),
                "covariance_part": self.covariance_part.tolist()}


def pg_update_variance(mdp: TabularMDP, pg: PGConfig, s: int, inputs: EstimatorInputs,
                       estimator_tag: str,
                       batch: Optional[TrajectoryBatch] = None) -> UpdateVarianceReport:
    policy = softmax_policy(pg.params)
    if np.max(np.abs(policy.probs - inputs.policy.probs)) > 1e-12:
        raise PreconditionError("estimator policy is not the softmax of the PG parameters")
    batch = _enumerate_for(mdp, policy, s, lookahead(estimator_tag, inputs), batch)
    est = estimate_batch(estimator_tag, batch, 0, inputs)
    A = est.shape[1]
    grads = np.stack([softmax_gradient(pg.params, s, a) for a in range(A)])  # [A, S, A]
    flat = grads.reshape(A, -1)
    updates = est @ flat
    _, cov_u = weighted_moments(updates, batch.probs)
    direct = np.diag(cov_u).reshape(grads.shape[1:])
    mean, cov = weighted_moments(est, batch.probs)
    var_part = np.einsum("a,ai->i", np.diag(cov), flat ** 2)
    cov_part = np.zeros_like(var_part)
    for a in range(A):
        for b in range(a + 1, A):
            cov_part += 2.0 * flat[a] * flat[b] * cov[a, b]
    shape = grads.shape[1:]
    return UpdateVarianceReport(direct, (var_part + cov_part).reshape(shape),
                                var_part.reshape(shape), cov_part.reshape(shape),
                                pg.step_size, estimator_tag)

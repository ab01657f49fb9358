"""Controlled errors in the value estimate and the hindsight table.

Two error models are provided: seeded uniform noise and a systematic shift.
Perturbed hindsight rows are clipped at zero and renormalized.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np

from .analysis import exact_moments
from .estimators import DELTA_HCA, HCA, MC, EstimatorInputs
from .exact_oracle import OracleBundle
from .mdp_core import ValueFunction
from .trajectories import enumerate_batch

VALUE_FUNCTION = "value_function"
HINDSIGHT_TABLE = "hindsight_table"
ADDITIVE_NOISE = "additive_noise"
SYSTEMATIC_SHIFT = "systematic_shift"

CSV_COLUMNS = ("epsilon", "target", "mode", "estimator", "state", "action", "bias", "variance")


@dataclass(frozen=True)
class PerturbSpec:
    epsilon: float
    target: str = VALUE_FUNCTION
    mode: str = ADDITIVE_NOISE
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be non-negative")
        if self.target not in (VALUE_FUNCTION, HINDSIGHT_TABLE):
            raise ValueError(f"unknown perturbation target {self.target!r}")
        if self.mode not in (ADDITIVE_NOISE, SYSTEMATIC_SHIFT):
            raise ValueError(f"unknown perturbation mode {self.mode!r}")


def perturb_value(v: ValueFunction, spec: PerturbSpec, terminal) -> ValueFunction:
    """Perturb non-terminal entries; terminal entries stay exactly zero."""
    if spec.target != VALUE_FUNCTION:
        raise ValueError("spec does not target the value function")
    if spec.epsilon == 0:
        return v
    live = ~np.asarray(terminal, dtype=bool)
    out = v.values.copy()
    if spec.mode == ADDITIVE_NOISE:
        noise = np.random.default_rng(spec.seed).uniform(-spec.epsilon, spec.epsilon, size=out.size)
        out[live] += noise[live]
    else:
        out[live] += spec.epsilon
    return ValueFunction(out)


def perturb_hindsight(bundle: OracleBundle, spec: PerturbSpec) -> OracleBundle:
    """Perturb every reachable ``(k >= 1, s, s')`` row of the hindsight table.

    ``systematic_shift`` adds epsilon to the first action before renormalizing,
    biasing credit toward it.
    """
    if spec.target != HINDSIGHT_TABLE:
        raise ValueError("spec does not target the hindsight table")
    if spec.epsilon == 0:
        return bundle
    table = bundle.hindsight.copy()
    if spec.mode == ADDITIVE_NOISE:
        noise = np.random.default_rng(spec.seed).uniform(-spec.epsilon, spec.epsilon, size=table.shape)
    else:
        noise = np.zeros(table.shape)
        noise[..., 0] = spec.epsilon
    noise[0] = 0.0
    rows = bundle.reachable.copy()
    rows[0] = False
    new = np.clip(table + noise, 0.0, None)
    sums = new.sum(axis=-1, keepdims=True)
    # a row clipped to all zeros keeps its original values
    keep = rows[..., None] & (sums > 0)
    new = np.where(keep, new / np.where(sums > 0, sums, 1.0), table)
    return dataclasses.replace(bundle, hindsight=new)


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    target: str
    mode: str
    estimator: str
    state: int
    action: int
    mean: float
    bias: float
    variance: float

    def csv_row(self):
        return (self.epsilon, self.target, self.mode, self.estimator, self.state,
                self.action, self.bias, self.variance)


def perturbed_inputs(inputs: EstimatorInputs, spec: PerturbSpec, terminal) -> EstimatorInputs:
    if spec.target == VALUE_FUNCTION:
        v = perturb_value(inputs.v_hat, spec, terminal)
        return inputs if v is inputs.v_hat else inputs.replace(v_hat=v)
    bundle = perturb_hindsight(inputs.oracle, spec)
    return inputs if bundle is inputs.oracle else inputs.replace(oracle=bundle)


def sweep(mdp, policy, s, inputs: EstimatorInputs, specs, estimators=(MC, HCA, DELTA_HCA)):
    """Exact bias and variance of each estimator at every grid point, sorted by epsilon.

    Bias is measured against the true advantage held by ``inputs.oracle``.
    """
    true_adv = inputs.oracle.adv[s]
    depth = max(inputs.N, inputs.hca_cutoff)
    batch = enumerate_batch(mdp, policy, s, depth)
    rows = []
    for spec in sorted(specs, key=lambda sp: sp.epsilon):
        cur = perturbed_inputs(inputs, spec, mdp.terminal)
        for tag in estimators:
            rep = exact_moments(mdp, policy, s, cur, tag, batch)
            for a in range(rep.mean.size):
                rows.append(SweepRow(spec.epsilon, spec.target, spec.mode, tag, s, a,
                                     float(rep.mean[a]), float(rep.mean[a] - true_adv[a]),
                                     float(rep.variance[a])))
    return rows


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())

#!/usr/bin/env python3
"""Print the counterexample: both trajectories and the per-action estimates of each estimator."""

import argparse

import numpy as np

from hcalab.analysis import exact_moments
from hcalab.environments import A_, FIGURE1_STATES, figure1_mdp
from hcalab.estimators import DELTA_HCA, HCA, MC, EstimatorInputs, estimate
from hcalab.exact_oracle import build_oracle
from hcalab.trajectories import enumerate_trajectories


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=3, help="look-ahead (1..3)")
    args = ap.parse_args()

    mdp, pol = figure1_mdp()
    oracle = build_oracle(mdp, pol, args.N)
    inputs = EstimatorInputs(pol, oracle.v, oracle, args.N, mdp.discount)
    print("V_pi:", dict(zip(FIGURE1_STATES, np.round(oracle.v.values, 12).tolist())))
    for w in enumerate_trajectories(mdp, pol, A_, mdp.horizon):
        tr = w.trajectory
        path = " -> ".join(FIGURE1_STATES[tr.state(i)] for i in range(tr.effective_length + 1))
        print(f"\np={w.probability:.2f}  {path}  rewards={list(tr.rewards)}")
        for tag in (MC, HCA, DELTA_HCA):
            print(f"  {tag:<10}", estimate(tag, tr, 0, inputs).per_action)
    print("\nexact variance at A")
    for tag in (MC, HCA, DELTA_HCA):
        print(f"  {tag:<10}", exact_moments(mdp, pol, A_, inputs, tag).variance)


if __name__ == "__main__":
    main()

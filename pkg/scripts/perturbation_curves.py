#!/usr/bin/env python3
"""Bias and variance of each estimator as the value function or hindsight table is corrupted."""

import argparse

import numpy as np

from hcalab.environments import benchmark_instances, random_value
from hcalab.estimators import EstimatorInputs
from hcalab.exact_oracle import build_oracle
from hcalab.perturbation import PerturbSpec, sweep, write_sweep_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instance", type=int, default=0, help="index into the benchmark family")
    ap.add_argument("--target", choices=("value_function", "hindsight_table"), default="hindsight_table")
    ap.add_argument("--mode", choices=("additive_noise", "systematic_shift"), default="additive_noise")
    ap.add_argument("--eps", type=float, nargs="+", default=[0.0, 0.01, 0.02, 0.05, 0.1, 0.2])
    ap.add_argument("--N", type=int, default=4)
    ap.add_argument("--exact-values", action="store_true",
                    help="use V_pi instead of a random value estimate")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="perturbation.csv")
    args = ap.parse_args()

    inst = benchmark_instances(args.instance + 1)[args.instance]
    mdp, pol = inst.mdp, inst.policy
    o = build_oracle(mdp, pol, args.N)
    v = o.v if args.exact_values else random_value(mdp, args.seed)
    inputs = EstimatorInputs(pol, v, o, args.N, mdp.discount)
    s = int(np.flatnonzero(~mdp.terminal)[0])
    specs = [PerturbSpec(e, args.target, args.mode, args.seed) for e in args.eps]
    rows = sweep(mdp, pol, s, inputs, specs)
    write_sweep_csv(args.out, rows)
    for r in rows:
        print(f"eps={r.epsilon:<6g} {r.estimator:<10} a={r.action}  bias={r.bias:+.4f}  "
              f"var={r.variance:.4f}")


if __name__ == "__main__":
    main()

"""Config-driven experiment runner.

    hcalab run <config.json>      write report.json, CSV tables and manifest.json
    hcalab verify <config.json>   theorem gate over the counterexample and seeded random MDPs
    hcalab validate <mdp.json>    list MDP invariant violations
    hcalab oracle <mdp.json>      dump the exact oracle bundle as JSON

Exit codes: 0 ok, 2 bad config or input, 3 enumeration cap exceeded,
4 invariant or theorem check failed. Errors are reported as one JSON line on
stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .analysis import (PGConfig, PreconditionError, cross_action_covariance_check,
                       empirical_moments, exact_moments, pg_update_variance,
                       variance_decomposition)
from .environments import (RandomMdpConfig, benchmark_instances, chain_mdp, figure1_mdp,
                           figure1_policy, random_mdp, random_softmax_params, random_value)
from .estimators import (DELTA_HCA, ESTIMATORS, HCA, MC, EstimatorInputs,
                         ZeroProbabilityActionError, estimate_batch, lookahead)
from .exact_oracle import RESIDUAL_TOL, bayes_violations, bellman_residual, build_oracle
from .mdp_core import (InvalidMDPError, Policy, SoftmaxPolicy, ValueFunction, load_mdp,
                       softmax_policy, validate_mdp)
from .perturbation import (PerturbSpec, perturb_hindsight, perturbed_inputs, sweep,
                           write_sweep_csv)
from .trajectories import EnumerationCapError, enumerate_batch, sample_batch

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_INVARIANT = 0, 2, 3, 4
TOL = 1e-10

ANALYSES = ("moments", "decomposition", "covariance", "update_variance", "perturbation")
CHECKS = ("bayes", "theorem1", "theorem2", "lemma1", "covariance", "eq6", "update_order")

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_perturb = {
    "type": "object", "additionalProperties": False,
    "required": ["target"],
    "properties": {
        "target": {"enum": ["value_function", "hindsight_table"]},
        "mode": {"enum": ["additive_noise", "systematic_shift"]},
        "epsilon": {"type": "number", "minimum": 0},
        "epsilons": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "seed": {"type": "integer"},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["environment"],
    "properties": {
        "name": {"type": "string"},
        "environment": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "builtin": {"enum": ["figure1", "chain", "random"]},
                "params": {"type": "object"},
                "path": {"type": "string"},
            },
            "oneOf": [{"required": ["builtin"]}, {"required": ["path"]}],
        },
        "policy": {
            "type": "object", "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["default", "uniform", "softmax", "matrix"]},
                "params": _matrix, "probs": _matrix,
                "seed": {"type": "integer"}, "scale": {"type": "number"},
            },
        },
        "value": {
            "type": "object", "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["exact", "zero", "random", "explicit"]},
                "values": {"type": "array", "items": {"type": "number"}},
                "seed": {"type": "integer"},
            },
        },
        "estimators": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object", "additionalProperties": False,
                "required": ["name", "N"],
                "properties": {
                    "name": {"enum": list(ESTIMATORS)},
                    "N": {"type": "integer", "minimum": 1},
                    "K": {"type": "integer", "minimum": 1},
                },
            },
        },
        "states": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "analyses": {"type": "array", "items": {"enum": list(ANALYSES)}},
        "mode": {
            "type": "object", "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["exact", "sampled"]},
                "samples": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "step_size": {"type": "number", "exclusiveMinimum": 0},
        "perturbation": _perturb,
        "output_dir": {"type": "string"},
        "verify": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "figure1": {"type": "boolean"},
                "random_instances": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
                "max_N": {"type": "integer", "minimum": 1},
                "value_samples": {"type": "integer", "minimum": 0},
                "value": {"enum": ["exact", "zero", "random"]},
                "checks": {"type": "array", "items": {"enum": list(CHECKS)}},
                "hindsight_perturbation": _perturb,
            },
        },
    },
}


class ConfigError(ValueError):
    pass


class InvariantFailure(RuntimeError):
    pass


def _emit_error(code, kind, message):
    sys.stderr.write(json.dumps({"status": "error", "exit_code": code, "kind": kind,
                                 "message": message}) + "\n")


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from exc
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def build_environment(cfg):
    env = cfg["environment"]
    params = env.get("params", {})
    try:
        if "path" in env:
            path = Path(env["path"])
            if not path.is_absolute():
                path = Path(cfg.get("_base", ".")) / path
            mdp = load_mdp(path)
            report = validate_mdp(mdp)
            if not report.ok:
                raise ConfigError("invalid MDP file: " + "; ".join(report.violations))
            return mdp, None
        name = env["builtin"]
        if name == "figure1":
            mdp, pol = figure1_mdp()
            return mdp, pol
        if name == "chain":
            return chain_mdp(**params), None
        return random_mdp(RandomMdpConfig(**params)), None
    except ConfigError:
        raise
    except (TypeError, ValueError, OSError, KeyError) as exc:
        raise ConfigError(f"environment: {exc}") from exc


def build_policy(cfg, mdp, default):
    spec = cfg.get("policy", {"kind": "default"})
    kind = spec["kind"]
    S, A = mdp.num_states, mdp.num_actions
    try:
        if kind == "default":
            return (default if default is not None else Policy.uniform(S, A)), None
        if kind == "uniform":
            params = SoftmaxPolicy(np.zeros((S, A)))
            return softmax_policy(params), params
        if kind == "softmax":
            if "params" in spec:
                params = SoftmaxPolicy(spec["params"])
            else:
                params = random_softmax_params(S, A, spec.get("seed", 0), spec.get("scale", 1.0))
            if params.params.shape != (S, A):
                raise ConfigError(f"softmax params must have shape ({S}, {A})")
            return softmax_policy(params), params
        policy = Policy(spec["probs"])
        if policy.probs.shape != (S, A):
            raise ConfigError(f"policy matrix must have shape ({S}, {A})")
        return policy, None
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"policy: {exc}") from exc


def build_value(cfg, mdp, oracle):
    spec = cfg.get("value", {"kind": "exact"})
    kind = spec["kind"]
    if kind == "exact":
        return oracle.v
    if kind == "zero":
        return ValueFunction(np.zeros(mdp.num_states))
    if kind == "random":
        return random_value(mdp, spec.get("seed", 0))
    values = spec.get("values")
    if values is None or len(values) != mdp.num_states:
        raise ConfigError("explicit value needs one entry per state")
    return ValueFunction.for_mdp(mdp, values)


def _softmax_params_for(policy, params):
    if params is not None:
        return params
    if np.all(policy.probs > 0):
        return SoftmaxPolicy(np.log(policy.probs))
    return None


# run ----------------------------------------------------------------------

def _default_states(mdp, policy):
    full = np.all(policy.probs > 0, axis=1)
    return [int(s) for s in np.flatnonzero(~mdp.terminal & full)]


def _moment_cell(mdp, policy, s, inputs, tag, mode):
    if mode["kind"] == "exact":
        return exact_moments(mdp, policy, s, inputs, tag)
    depth = lookahead(tag, inputs)
    batch = sample_batch(mdp, policy, s, depth, mode.get("seed", 0), mode.get("samples", 10000))
    return empirical_moments(estimate_batch(tag, batch, 0, inputs),
                             {"state": s, "t": 0, "N": inputs.N, "estimator": tag})


def _state_cells(args):
    cfg, s = args
    mdp, default = build_environment(cfg)
    policy, params = build_policy(cfg, mdp, default)
    specs = cfg.get("estimators", [{"name": t, "N": 1} for t in ESTIMATORS])
    max_k = max(max(e["N"], e.get("K", e["N"])) for e in specs)
    if max_k > mdp.horizon:
        raise ConfigError(f"estimator look-ahead {max_k} exceeds the horizon {mdp.horizon}")
    oracle = build_oracle(mdp, policy, max_k)
    v = build_value(cfg, mdp, oracle)
    analyses = cfg.get("analyses", ["moments"])
    mode = cfg.get("mode", {"kind": "exact"})
    cells, csv_rows, sweep_rows = [], [], []
    residual = bellman_residual(mdp, policy, v)
    for spec in specs:
        tag, N = spec["name"], spec["N"]
        inputs = EstimatorInputs(policy, v, oracle, N, mdp.discount, spec.get("K"))
        base = {"state": s, "estimator": tag, "N": N, "K": spec.get("K")}
        try:
            if "moments" in analyses:
                rep = _moment_cell(mdp, policy, s, inputs, tag, mode)
                cells.append({**base, "analysis": "moments", "result": rep.to_dict()})
                csv_rows.extend(rep.rows(cfg.get("name", "")))
            if "decomposition" in analyses and tag != HCA:
                rep = variance_decomposition(mdp, policy, s, inputs, tag)
                cells.append({**base, "analysis": "decomposition", "result": rep.to_dict()})
            if "update_variance" in analyses:
                sp = _softmax_params_for(policy, params)
                if sp is None:
                    cells.append({**base, "analysis": "update_variance",
                                  "skipped": "policy is not a softmax policy"})
                else:
                    pg = PGConfig(cfg.get("step_size", 0.1), sp)
                    rep = pg_update_variance(mdp, pg, s, inputs, tag)
                    cells.append({**base, "analysis": "update_variance", "result": rep.to_dict()})
            if "perturbation" in analyses and "perturbation" in cfg:
                p = cfg["perturbation"]
                eps = p.get("epsilons", [p.get("epsilon", 0.0)])
                grid = [PerturbSpec(e, p["target"], p.get("mode", "additive_noise"), p.get("seed", 0))
                        for e in eps]
                rows = sweep(mdp, policy, s, inputs, grid, estimators=(tag,))
                sweep_rows.extend(rows)
                cells.append({**base, "analysis": "perturbation",
                              "result": [r.__dict__ for r in rows]})
        except ZeroProbabilityActionError as exc:
            cells.append({**base, "skipped": str(exc)})
    if "covariance" in analyses:
        for N in sorted({e["N"] for e in specs}):
            inputs = EstimatorInputs(policy, v, oracle, N, mdp.discount)
            base = {"state": s, "estimator": "MC/DELTA_HCA", "N": N, "analysis": "covariance"}
            if residual > RESIDUAL_TOL:
                cells.append({**base, "skipped": f"precondition unmet: Bellman residual {residual:.3e}"})
                continue
            chk = cross_action_covariance_check(mdp, policy, s, inputs)
            if not chk.passed:
                raise InvariantFailure(f"cross-action covariance identities failed at state {s}, N={N}")
            cells.append({**base, "result": chk.to_dict()})
    return cells, csv_rows, sweep_rows


def _pmap(fn, items, workers):
    if workers and workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _config_hash(cfg) -> str:
    clean = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return hashlib.sha256(json.dumps(clean, sort_keys=True).encode()).hexdigest()


def _dump(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")


def run(cfg, out_dir: Path, workers: int = 1) -> None:
    mdp, default = build_environment(cfg)
    policy, _ = build_policy(cfg, mdp, default)
    states = cfg.get("states") or _default_states(mdp, policy)
    for s in states:
        if s >= mdp.num_states or mdp.terminal[s]:
            raise ConfigError(f"state {s} is not a non-terminal state of the MDP")
    results = _pmap(_state_cells, [(cfg, s) for s in states], workers)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = [c for r in results for c in r[0]]
    _dump(out_dir / "report.json", {"name": cfg.get("name", ""), "cells": cells})
    with open(out_dir / "moments.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("mdp_id", "state", "action", "N", "estimator", "statistic", "value", "stderr"))
        for r in results:
            w.writerows(r[1])
    sweep_rows = [row for r in results for row in r[2]]
    if sweep_rows:
        write_sweep_csv(out_dir / "perturbation.csv", sweep_rows)
    mode = cfg.get("mode", {"kind": "exact"})
    _dump(out_dir / "manifest.json", {
        "tool": "hcalab", "version": __version__, "config_sha256": _config_hash(cfg),
        "mode": mode["kind"],
        "seeds": {"sampling": mode.get("seed", 0) if mode["kind"] == "sampled" else None,
                  "perturbation": cfg.get("perturbation", {}).get("seed"),
                  "policy": cfg.get("policy", {}).get("seed"),
                  "value": cfg.get("value", {}).get("seed")},
        "files": sorted(p.name for p in out_dir.iterdir() if p.name != "manifest.json"),
    })


# verify -------------------------------------------------------------------

def _failure(mdp_id, s, a, N, quantity, got, bound):
    return {"mdp_id": mdp_id, "state": s, "action": a, "N": N, "quantity": quantity,
            "got": got, "bound": bound}


def _verify_instance(args):
    """Run every enabled check on one instance; returns (failures, skipped, count)."""
    name, mdp, policy, params, vcfg = args
    checks = vcfg.get("checks", list(CHECKS))
    max_N = min(vcfg.get("max_N", 5), mdp.horizon)
    oracle = build_oracle(mdp, policy, max_N)
    if "hindsight_perturbation" in vcfg:
        p = vcfg["hindsight_perturbation"]
        oracle = perturb_hindsight(oracle, PerturbSpec(p.get("epsilon", 0.1), "hindsight_table",
                                                       p.get("mode", "additive_noise"), p.get("seed", 0)))
    fails, skipped, n = [], [], 0
    if "bayes" in checks:
        n += 1
        for (k, s, s2, a), gap in bayes_violations(oracle, 1e-12)[:20]:
            fails.append(_failure(name, s, a, k, f"bayes_identity(s'={s2})", gap, 1e-12))
    value_kind = vcfg.get("value", "exact")
    if value_kind == "exact":
        v = oracle.v
    elif value_kind == "zero":
        v = ValueFunction(np.zeros(mdp.num_states))
    else:
        v = random_value(mdp, 12345)
    exact_v = bellman_residual(mdp, policy, v) <= RESIDUAL_TOL
    vs = [v] + [random_value(mdp, j) for j in range(vcfg.get("value_samples", 3))]
    states = _default_states(mdp, policy)
    g = mdp.discount
    for s in states:
        batch = enumerate_batch(mdp, policy, s, max_N)
        for N in range(1, max_N + 1):
            if "theorem1" in checks:
                for vh in vs:
                    inp = EstimatorInputs(policy, vh, oracle, N, g)
                    m_mc = exact_moments(mdp, policy, s, inp, MC, batch).mean
                    m_dh = exact_moments(mdp, policy, s, inp, DELTA_HCA, batch).mean
                    n += 1
                    for a in np.flatnonzero(np.abs(m_mc - m_dh) > TOL):
                        fails.append(_failure(name, s, int(a), N, "theorem1_mean_gap",
                                              float(abs(m_mc[a] - m_dh[a])), TOL))
            needs_exact = {"theorem2", "lemma1", "covariance", "eq6", "update_order"} & set(checks)
            if not needs_exact:
                continue
            if not exact_v:
                for c in sorted(needs_exact):
                    skipped.append({"mdp_id": name, "state": s, "N": N, "check": c,
                                    "reason": "precondition unmet, skipped"})
                continue
            inp = EstimatorInputs(policy, v, oracle, N, g)
            if "theorem2" in checks:
                v_mc = exact_moments(mdp, policy, s, inp, MC, batch).variance
                v_dh = exact_moments(mdp, policy, s, inp, DELTA_HCA, batch).variance
                n += 1
                for a in np.flatnonzero(v_dh > v_mc + TOL):
                    fails.append(_failure(name, s, int(a), N, "theorem2_variance_excess",
                                          float(v_dh[a] - v_mc[a]), TOL))
            if "lemma1" in checks:
                for tag in (MC, DELTA_HCA):
                    d = variance_decomposition(mdp, policy, s, inp, tag, batch)
                    n += 1
                    if d.max_cross > TOL:
                        fails.append(_failure(name, s, None, N, f"lemma1_cross_term[{tag}]",
                                              d.max_cross, TOL))
                    gap = float(np.max(np.abs(d.total - d.direct_variance)))
                    if gap > TOL:
                        fails.append(_failure(name, s, None, N, f"decomposition_total[{tag}]", gap, TOL))
            if "covariance" in checks and mdp.num_actions > 1:
                chk = cross_action_covariance_check(mdp, policy, s, inp, batch)
                n += 1
                for label, ok in (("mc_covariance_identity", chk.mc_matches),
                                  ("dhca_covariance_identity", chk.dhca_matches),
                                  ("dhca_covariance_dominates", chk.dhca_dominates)):
                    if not ok:
                        fails.append(_failure(name, s, None, N, label, None, TOL))
            if ("eq6" in checks or "update_order" in checks) and params is not None:
                pg = PGConfig(1.0, params)
                reps = {tag: pg_update_variance(mdp, pg, s, inp, tag, batch) for tag in (MC, DELTA_HCA)}
                if "eq6" in checks:
                    for tag, rep in reps.items():
                        n += 1
                        gap = float(np.max(np.abs(rep.per_coordinate_variance - rep.assembled_variance)))
                        if gap > TOL:
                            fails.append(_failure(name, s, None, N, f"eq6_assembly[{tag}]", gap, TOL))
                if "update_order" in checks and mdp.num_actions == 2:
                    n += 1
                    diff = reps[DELTA_HCA].total_trace - reps[MC].total_trace
                    if diff > TOL:
                        fails.append(_failure(name, s, None, N, "update_variance_order", diff, TOL))
    return fails, skipped, n


def verify(cfg, workers: int = 1) -> dict:
    vcfg = dict(cfg.get("verify", {}))
    jobs = []
    if vcfg.get("figure1", True):
        mdp, pol = figure1_mdp()
        jobs.append(("figure1", mdp, pol, None, vcfg))
    count = vcfg.get("random_instances", 50)
    for inst in benchmark_instances(count, vcfg.get("seed", 0)):
        jobs.append((inst.name, inst.mdp, inst.policy, inst.params, vcfg))
    results = _pmap(_verify_instance, jobs, workers)
    failures = [f for r in results for f in r[0]]
    skipped = [s for r in results for s in r[1]]
    return {"passed": not failures, "checks_run": sum(r[2] for r in results),
            "instances": len(jobs), "failures": failures, "skipped": skipped}


# entry point --------------------------------------------------------------

def _apply_overrides(cfg, args):
    if getattr(args, "samples", None) is not None or getattr(args, "seed", None) is not None:
        mode = dict(cfg.get("mode", {"kind": "sampled"}))
        mode["kind"] = "sampled"
        if args.samples is not None:
            mode["samples"] = args.samples
        if args.seed is not None:
            mode["seed"] = args.seed
        cfg["mode"] = mode
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hcalab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "verify"):
        p = sub.add_parser(name)
        p.add_argument("config")
        p.add_argument("--output-dir")
        p.add_argument("--samples", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("validate")
    p.add_argument("mdp")
    p = sub.add_parser("oracle")
    p.add_argument("mdp")
    p.add_argument("--policy", help="policy JSON ({\"probs\": [[...]]}); uniform if omitted")
    p.add_argument("--N", type=int, help="largest k for the k-step tables (default: horizon)")
    p.add_argument("--output-dir")
    args = parser.parse_args(argv)

    try:
        if args.command == "validate":
            report = validate_mdp(_load_mdp_arg(args.mdp))
            print(json.dumps({"valid": report.ok, "violations": report.violations}))
            return EXIT_OK if report.ok else EXIT_INVARIANT
        if args.command == "oracle":
            return _oracle_command(args)
        cfg = _apply_overrides(load_config(args.config), args)
        out = args.output_dir or cfg.get("output_dir")
        if args.command == "run":
            if not out:
                raise ConfigError("no output directory: set output_dir or pass --output-dir")
            run(cfg, Path(out), args.workers)
            print(json.dumps({"status": "ok", "output_dir": str(out)}))
            return EXIT_OK
        result = verify(cfg, args.workers)
        if out:
            Path(out).mkdir(parents=True, exist_ok=True)
            _dump(Path(out) / "verify.json", result)
        for f in result["failures"]:
            print("FAIL " + json.dumps(f))
        print(json.dumps({"passed": result["passed"], "checks_run": result["checks_run"],
                          "instances": result["instances"], "failures": len(result["failures"]),
                          "skipped": len(result["skipped"])}))
        if not result["passed"]:
            names = sorted({f["quantity"] for f in result["failures"]})
            _emit_error(EXIT_INVARIANT, "invariant", "failed checks: " + ", ".join(names))
            return EXIT_INVARIANT
        return EXIT_OK
    except ConfigError as exc:
        _emit_error(EXIT_CONFIG, "config", str(exc))
        return EXIT_CONFIG
    except EnumerationCapError as exc:
        _emit_error(EXIT_CAP, "enumeration_cap", str(exc))
        return EXIT_CAP
    except (InvariantFailure, PreconditionError, AssertionError, InvalidMDPError) as exc:
        _emit_error(EXIT_INVARIANT, "invariant", str(exc))
        return EXIT_INVARIANT


def _load_mdp_arg(path):
    try:
        return load_mdp(path)
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load MDP {path}: {exc}") from exc


def _oracle_command(args) -> int:
    mdp = _load_mdp_arg(args.mdp)
    report = validate_mdp(mdp)
    if not report.ok:
        raise InvalidMDPError(report.violations)
    if args.policy:
        try:
            policy = Policy.from_dict(json.loads(Path(args.policy).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load policy: {exc}") from exc
    else:
        policy = Policy.uniform(mdp.num_states, mdp.num_actions)
    N = args.N or mdp.horizon
    if not 1 <= N <= mdp.horizon:
        raise ConfigError(f"N must lie in [1, {mdp.horizon}]")
    bundle = build_oracle(mdp, policy, N)
    doc = json.dumps(bundle.to_dict(), allow_nan=False)
    if args.output_dir:
        Path(args.output_dir).mkdir(parents=True, exist_ok=True)
        (Path(args.output_dir) / "oracle.json").write_text(doc + "\n")
    else:
        print(doc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from hcalab.cli import main
from hcalab.environments import figure1_mdp
from hcalab.exact_oracle import OracleBundle
from hcalab.mdp_core import save_mdp

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def stderr_record(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return json.loads(err[0])


def figure1_variances(report):
    out = {}
    for cell in report["cells"]:
        if cell["analysis"] == "moments":
            out[cell["estimator"]] = cell["result"]["variance"]
    return out


def test_run_figure1(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(CONFIGS / "figure1.json"), "--output-dir", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    var = figure1_variances(rep)
    assert np.allclose(var["MC"], [0, 0], atol=1e-12)
    assert np.allclose(var["HCA"], [1, 1], atol=1e-12)
    assert np.allclose(var["DELTA_HCA"], [0, 0], atol=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["mode"] == "exact" and len(manifest["config_sha256"]) == 64
    assert "report.json" in manifest["files"] and "moments.csv" in manifest["files"]


def test_exact_run_is_byte_reproducible(tmp_path):
    cfg = CONFIGS / "random_sweep.json"
    outs = []
    for i, workers in enumerate((1, 1, 3)):
        out = tmp_path / f"o{i}"
        assert main(["run", str(cfg), "--output-dir", str(out), "--workers", str(workers)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1] == outs[2]
    assert "perturbation.csv" in outs[0]


def test_sampled_run_is_deterministic(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"s{i}"
        assert main(["run", str(CONFIGS / "figure1.json"), "--output-dir", str(out),
                     "--samples", "2000", "--seed", "9"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outs[0] == outs[1]
    rep = json.loads(outs[0]["report.json"])
    moments = [c for c in rep["cells"] if c["analysis"] == "moments"]
    assert all(c["result"]["mode"] == "empirical" for c in moments)


@pytest.mark.parametrize("doc", [
    "{not json",
    {"environment": {"builtin": "figure1"}, "surprise": 1},
    {"environment": {"builtin": "moon"}},
    {"environment": {"builtin": "figure1"}, "estimators": [{"name": "MC", "N": 0}]},
    {"environment": {"builtin": "random", "params": {"num_states": 1}}},
    {"environment": {"builtin": "figure1"}, "estimators": [{"name": "MC", "N": 9}]},
])
def test_bad_config_exits_2_without_outputs(tmp_path, capsys, doc):
    out = tmp_path / "never"
    p = tmp_path / "bad.json"
    p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
    assert main(["run", str(p), "--output-dir", str(out)]) == 2
    assert not out.exists()
    rec = stderr_record(capsys)
    assert rec["exit_code"] == 2 and rec["kind"] == "config"


def test_enumeration_cap_exits_3(tmp_path, capsys):
    cfg = {"environment": {"builtin": "random",
                           "params": {"num_states": 20, "num_actions": 3, "branching": 19,
                                      "discount": 0.9, "horizon": 6, "seed": 1}},
           "estimators": [{"name": "MC", "N": 6}], "states": [0]}
    out = tmp_path / "cap"
    assert main(["run", str(write(tmp_path, cfg)), "--output-dir", str(out)]) == 3
    assert stderr_record(capsys)["kind"] == "enumeration_cap"
    assert not out.exists()


def test_verify_default_suite(capsys):
    assert main(["verify", str(CONFIGS / "verify_default.json"), "--workers", "4"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["passed"] and summary["instances"] == 51 and summary["failures"] == 0


def test_verify_zero_value_skips_exact_value_checks(tmp_path, capsys):
    cfg = {"environment": {"builtin": "figure1"},
           "verify": {"figure1": True, "random_instances": 3, "value": "zero",
                      "checks": ["theorem1", "theorem2"], "max_N": 3}}
    out = tmp_path / "v"
    assert main(["verify", str(write(tmp_path, cfg)), "--output-dir", str(out)]) == 0
    result = json.loads((out / "verify.json").read_text())
    assert result["passed"] and result["skipped"]
    assert {s["reason"] for s in result["skipped"]} == {"precondition unmet, skipped"}
    assert {s["check"] for s in result["skipped"]} == {"theorem2"}


def test_verify_corrupted_hindsight_exits_4(tmp_path, capsys):
    cfg = {"environment": {"builtin": "figure1"},
           "verify": {"figure1": False, "random_instances": 2, "checks": ["bayes"],
                      "hindsight_perturbation": {"target": "hindsight_table", "epsilon": 0.2}}}
    assert main(["verify", str(write(tmp_path, cfg))]) == 4
    captured = capsys.readouterr()
    assert "bayes_identity" in captured.out
    rec = json.loads(captured.err.strip())
    assert rec["exit_code"] == 4 and "bayes_identity" in rec["message"]


def test_validate_subcommand(tmp_path, capsys):
    mdp, _ = figure1_mdp()
    good = tmp_path / "m.json"
    save_mdp(mdp, good)
    assert main(["validate", str(good)]) == 0
    assert json.loads(capsys.readouterr().out)["valid"]
    doc = json.loads(good.read_text())
    doc["transition"][0][0][1] = 0.5
    bad = write(tmp_path, doc, "bad.json")
    assert main(["validate", str(bad)]) == 4
    out = json.loads(capsys.readouterr().out)
    assert not out["valid"] and any("(0, 0)" in v for v in out["violations"])
    assert main(["validate", str(tmp_path / "missing.json")]) == 2


def test_oracle_dump_round_trips(tmp_path, capsys):
    mdp, pol = figure1_mdp()
    path = tmp_path / "m.json"
    save_mdp(mdp, path)
    pfile = write(tmp_path, pol.to_dict(), "pol.json")
    assert main(["oracle", str(path), "--policy", str(pfile), "--N", "3"]) == 0
    doc = json.loads(capsys.readouterr().out)
    bundle = OracleBundle.from_dict(doc)
    assert np.allclose(bundle.v.values, [0, -1, -1, 0, 0], atol=1e-12)
    assert bundle.max_k == 3
    assert main(["oracle", str(path), "--N", "3", "--output-dir", str(tmp_path / "od")]) == 0
    assert (tmp_path / "od" / "oracle.json").exists()
    assert main(["oracle", str(path), "--N", "7"]) == 2


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("hcalab")
    cmd = [exe] if exe else [sys.executable, "-m", "hcalab.cli"]
    res = subprocess.run(cmd + ["run", str(CONFIGS / "figure1.json"), "--output-dir",
                                str(tmp_path / "e")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert json.loads(res.stdout)["status"] == "ok"

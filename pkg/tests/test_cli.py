import csv
import io
import json
import subprocess
import sys

import pytest

from floqising.cli import main


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def _run(tmp_path, command, cfg, name="out", *extra):
    cfg_path = _write(tmp_path / f"{name}.json", cfg) if cfg is not None else None
    args = [command, "--out-dir", str(tmp_path / name), "--workers", "1", *extra]
    if cfg_path:
        args += ["--config", cfg_path]
    return main(args), tmp_path / name


def _rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


QUENCH = {"lattice": {"nx": 3, "ny": 3}, "J": -1.0, "h": 2.0, "dt": 0.25, "steps": 5}


def test_quench_ideal(tmp_path):
    code, out = _run(tmp_path, "quench", QUENCH)
    assert code == 0
    rows = _rows(out / "observables.csv")
    assert len(rows) == 6
    assert float(rows[0]["mean"]) == 1.0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "quench"
    assert "observables.csv" in manifest["outputs"]


def test_quench_shots_are_deterministic(tmp_path):
    cfg = {
        **QUENCH,
        "lattice": {"nx": 2, "ny": 2},
        "steps": 3,
        "mode": "shots",
        "shots": 60,
        "noise": {"depolarizing": 0.01, "leak_prob_2q": 0.01},
        "transforms": {"dynamical_decoupling": True, "randomized_compiling": True},
        "amplification": {"zeta": 0.3},
    }
    assert _run(tmp_path, "quench", cfg, "a", "--seed", "3")[0] == 0
    assert _run(tmp_path, "quench", cfg, "b", "--seed", "3")[0] == 0
    assert _run(tmp_path, "quench", cfg, "c", "--seed", "4")[0] == 0
    for name in ("observables.csv", "archive_raw.csv", "archive_na.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "archive_raw.csv").read_bytes() != (tmp_path / "c" / "archive_raw.csv").read_bytes()
    tags = {r["tag"] for r in _rows(tmp_path / "a" / "observables.csv")}
    assert tags == {"raw", "NA"}

    plan = json.loads((tmp_path / "a" / "plan.json").read_text())
    mit = {
        "lattice": {"nx": 2, "ny": 2},
        "raw_archive": str(tmp_path / "a" / "archive_raw.csv"),
        "amplified_archive": str(tmp_path / "a" / "archive_na.csv"),
        "plan": {k: plan[k] for k in ("alpha", "r", "zeta", "kappa")},
    }
    code, out = _run(tmp_path, "mitigate", mit, "m")
    assert code == 0
    assert len(_rows(out / "mitigation.csv")) == 4


def test_config_errors_exit_2(tmp_path, capsys):
    code, _ = _run(tmp_path, "quench", {**QUENCH, "dt": -1})
    assert code == 2
    assert "dt" in capsys.readouterr().err
    code, _ = _run(tmp_path, "quench", {**QUENCH, "bogus": 1}, "o2")
    assert code == 2
    assert main(["quench", "--config", str(tmp_path / "missing.json"), "--out-dir", str(tmp_path / "o3")]) == 2


def test_resource_cap_exits_3(tmp_path):
    code, _ = _run(tmp_path, "quench", {**QUENCH, "lattice": {"nx": 6, "ny": 6}})
    assert code == 3


def test_spd_command(tmp_path):
    cfg = {**QUENCH, "lattice": {"nx": 2, "ny": 3}, "deltas": [0.0], "compare_exact": True}
    code, out = _run(tmp_path, "spd", cfg)
    assert code == 0
    rows = _rows(out / "spd.csv")
    assert len(rows) == 6
    assert all(abs(float(r["value"]) - float(r["exact"])) < 1e-10 for r in rows)
    code, _ = _run(tmp_path, "spd", {**cfg, "max_terms": 10}, "sat")
    assert code == 3


def test_cb_command(tmp_path):
    code, out = _run(tmp_path, "cb", {"total_error": 0.01, "shots": 20000})
    assert code == 0
    assert len(_rows(out / "cb_fit.csv")) == 15
    doc = json.loads((out / "noise_model.json").read_text())
    assert doc["metadata"]["theta_eps"] == pytest.approx(0.01, abs=5e-3)
    assert sum(doc["probs"].values()) == pytest.approx(1.0)


def test_hydro_command(tmp_path, capsys):
    code, out = _run(tmp_path, "hydro", None)
    assert code == 0
    assert "D =" in capsys.readouterr().out
    assert {r["n"] for r in _rows(out / "hydro.csv")} >= {"1", "2", "3"}


def test_magnus_command(tmp_path):
    cfg = {"lattice": {"nx": 2, "ny": 3}, "J": -1.0, "h": 2.0, "dts": [0.2, 0.1], "thermal": True, "delta_theta": 0.5}
    code, out = _run(tmp_path, "magnus", cfg, "mg", "--format", "json")
    assert code == 0
    assert any(p.name.startswith("magnus") for p in out.iterdir())


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "floqising", "--help"], capture_output=True, text=True, check=True)
    for name in ("quench", "mitigate", "spd", "cb", "hydro", "magnus"):
        assert name in res.stdout

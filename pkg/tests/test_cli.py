import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from nematic_waves.cli import load_config, main
from nematic_waves.errors import ConfigError
from nematic_waves.state import read_snapshot, write_snapshot

COARSE = ["--override", "solver.h=0.02", "--override", "solver.T=0.1"]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_verify_on_trivial_fixture_passes(tmp_path, capsys):
    assert run(tmp_path, "verify", "--override", 'data={"fixture": "trivial"}', *COARSE) == 0
    table = capsys.readouterr().out
    assert "FAIL" not in table and table.count("PASS") >= 8
    checks = json.loads((tmp_path / "verify.json").read_text())
    assert all(c["ok"] for c in checks)


def test_degenerate_speed_exits_nonzero(tmp_path, capsys):
    code = run(tmp_path, "solve", "--override", "params.gamma=1.0")
    assert code == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "DegenerateSpeed"


def test_unknown_field_is_a_config_error(tmp_path, capsys):
    assert run(tmp_path, "solve", "--override", "solver.stepsize=0.1") == 3
    err = json.loads(capsys.readouterr().err)
    assert "solver.stepsize" in err["message"]


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"solver": {"h": -1}}))
    with pytest.raises(ConfigError, match="solver.h"):
        load_config(str(bad))
    bad.write_text(json.dumps({"data": {"fixture": "F9"}}))
    with pytest.raises(ConfigError, match="data.fixture"):
        load_config(str(bad))


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"solver": {"h": 0.05}, "metric": {"delta": 0.2}}))
    cfg = load_config(str(path), ["solver.T=0.3"])
    assert cfg.h == 0.05 and cfg.T == 0.3 and cfg.metric["delta"] == 0.2
    assert cfg.data.name == "F1"


def test_gronwall_csv(tmp_path):
    assert run(tmp_path, "gronwall", *COARSE, "--override", "metric.n_times=4") == 0
    with open(tmp_path / "gronwall.csv") as fh:
        rows = list(csv.DictReader(fh))
    t = np.array([float(r["t"]) for r in rows])
    ratio = np.array([float(r["ratio"]) for r in rows])
    assert len(rows) == 4 and np.all(np.diff(t) > 0)
    assert np.all(np.isfinite(ratio)) and ratio[0] == 1.0


def test_solve_and_reconstruct_outputs(tmp_path):
    assert run(tmp_path, "solve", *COARSE) == 0
    summary = json.loads((tmp_path / "solve_summary.json").read_text())
    assert summary["t_complete"] >= 0.1
    assert run(tmp_path, "reconstruct", *COARSE, "--override", "metric.n_times=3") == 0
    index = json.loads((tmp_path / "snapshots.json").read_text())
    assert [e["t"] for e in index] == [0.0, 0.05, 0.1]
    snap = read_snapshot(tmp_path / index[-1]["file"])
    assert snap.time == 0.1
    snap.validate()


def test_metric_and_compare_reports(tmp_path):
    assert run(tmp_path, "metric", *COARSE, "--override", "metric.n_times=2",
               "--override", "metric.lambda_samples=3") == 0
    rep = json.loads((tmp_path / "metric_report.json").read_text())
    assert len(rep["I"]) == 6 and rep["weighted"] <= rep["meta"]["zero_shift_value"]
    assert run(tmp_path, "compare", *COARSE, "--override", "metric.n_times=2",
               "--override", "metric.lambda_samples=3") == 0
    reps = json.loads((tmp_path / "comparison_report.json").read_text())
    assert [r["time"] for r in reps] == [0.0, 0.1]


def test_outputs_are_deterministic(tmp_path):
    outputs = []
    for k in range(2):
        out = tmp_path / str(k)
        assert main(["reconstruct", *COARSE, "--override", "metric.n_times=2", "--out", str(out)]) == 0
        assert main(["gronwall", *COARSE, "--override", "metric.n_times=3", "--out", str(out)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert outputs[0] == outputs[1]


def test_snapshot_csv_round_trip(tmp_path):
    assert run(tmp_path, "reconstruct", *COARSE, "--override", "metric.n_times=2") == 0
    snap = read_snapshot(tmp_path / "snapshot_001.csv")
    write_snapshot(snap, tmp_path / "again.csv")
    back = read_snapshot(tmp_path / "again.csv")
    for name in ("x", "n", "nt", "R", "S"):
        assert np.array_equal(getattr(back, name), getattr(snap, name))
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "snapshot_001.csv").read_bytes()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "nematic_waves.cli", "solve", "--override", "params.alpha=-1",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr)["error"] == "NonPositiveConstant"

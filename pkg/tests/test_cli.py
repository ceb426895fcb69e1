import json
from pathlib import Path

import numpy as np
import pytest

from twosite.cli import main

CONFIG_DIR = Path(__file__).resolve().parents[1] / "src/twosite/data/configs"


def write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def small_zero_dyn_config(**kw):
    cfg = {
        "y1ref": 1.0, "y2ref": 1.69, "method": "reduced",
        "horizon": 3.0, "sample_dt": 0.5,
        "initial_conditions": [[0.61, 0.8, 0.0, 0.0], [0.61, 1.0, 0.0, 0.1]],
    }
    cfg.update(kw)
    return cfg


def test_equilibrium_command(tmp_path):
    out = tmp_path / "eq"
    rc = main(["equilibrium", "--y1", "1.0", "--yhat2", "0.0",
               "--out", str(out)])
    assert rc == 0
    sol = json.loads((out / "solution.json").read_text())
    assert sol["residual"] < 1e-10
    assert sol["in_dhat"] is True
    assert abs(sol["y2"] - 1.6867) < 5e-4
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "equilibrium"
    assert (out / "solution.json").name in " ".join(man["outputs"])


def test_equilibrium_numerical_failure(tmp_path):
    rc = main(["equilibrium", "--y1", "3.5", "--out", str(tmp_path / "bad")])
    assert rc == 2


def test_zero_dynamics_command_and_determinism(tmp_path):
    cfg = write(tmp_path, "zd.json", small_zero_dyn_config())
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["zero-dynamics", "--config", cfg, "--out", str(out1)]) == 0
    assert main(["zero-dynamics", "--config", cfg, "--out", str(out2)]) == 0
    files = sorted(p.name for p in out1.glob("traj_*.csv"))
    assert files == ["traj_000.csv", "traj_001.csv"]
    for name in files:
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    summary = json.loads((out1 / "summary.json").read_text())
    assert len(summary["trajectories"]) == 2
    header = (out1 / files[0]).read_text().splitlines()[0]
    assert header == "t,eta1,eta2,eta3,eta4,F1,F2,F3,F4"


def test_zero_dynamics_empty_initial_conditions(tmp_path, capsys):
    cfg = write(tmp_path, "zd.json", small_zero_dyn_config(initial_conditions=[]))
    assert main(["zero-dynamics", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "initial_conditions" in capsys.readouterr().err


def test_zero_dynamics_grid_expansion(tmp_path):
    cfg = write(tmp_path, "zd.json", small_zero_dyn_config(
        initial_conditions={"eta1": 0.61, "eta2": [0.8, 1.0], "eta3": 0.0,
                            "eta4": [0.0, 0.1]}))
    out = tmp_path / "grid"
    assert main(["zero-dynamics", "--config", cfg, "--out", str(out)]) == 0
    assert len(list(out.glob("traj_*.csv"))) == 4


def test_scan_singularity_degenerate_grid(tmp_path):
    cfg = write(tmp_path, "s.json", {"kind": "singularity", "n1": 1, "n2": 1,
                                     "lo": 0.0, "hi": 0.0})
    out = tmp_path / "scan"
    assert main(["scan", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "singularity.csv").read_text().splitlines()
    assert len(lines) == 2           # header plus the single cell
    assert lines[0] == "x_e1,x_e3,detA,detDPhi,flags"
    assert int(lines[1].split(",")[-1]) & 1


def test_scan_singularity_small_grid(tmp_path):
    cfg = write(tmp_path, "s.json", {"kind": "singularity", "n1": 41, "n2": 41})
    out = tmp_path / "scan41"
    assert main(["scan", "--config", cfg, "--out", str(out), "--workers", "1"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["origin_inside"] is True
    assert 0 < summary["inside_cells"] < 41 * 41


def test_scan_eigq_crossing(tmp_path):
    cfg = write(tmp_path, "q.json", {"kind": "eigQ", "y1_min": 0.62,
                                     "y1_max": 0.72, "step": 0.02})
    out = tmp_path / "eigq"
    assert main(["scan", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["failures"] == 0
    assert abs(summary["crossing"] - 0.67) < 0.05
    header = (out / "eigq.csv").read_text().splitlines()[0].split(",")
    assert header[:5] == ["ref", "status", "max_re", "stable", "in_dhat"]


def test_scan_kind_validation(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", {"kind": "bogus"})
    assert main(["scan", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    cfg = write(tmp_path, "s2.json", {"n1": 3})
    assert main(["scan", "--config", cfg, "--out", str(tmp_path / "o2")]) == 1


def test_stabilize_command(tmp_path):
    cfg = write(tmp_path, "st.json", {
        "y1ref": 1.2, "initial": {"equilibrium": [1.0, 0.0]},
        "horizon": 8.0, "sample_dt": 0.1, "K": 0.7,
    })
    out = tmp_path / "stab"
    assert main(["stabilize", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mode"] == "stabilization"       # K forced to zero
    assert summary["K"] == 0.7                      # config echoed untouched
    assert summary["u_within_nominal"] is True
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith("t,y1,y2,yhat2ref,x1,")
    assert header.endswith("u1,u2,sigma1,sigma2")


def test_track_rejects_non_hurwitz_poles(tmp_path, capsys):
    cfg = write(tmp_path, "tr.json", {
        "y1ref": 1.2, "y2ref": 1.69, "K": 0.01,
        "poles_e": [2.5, -2.5, -2.5, -2.5, -2.5],
        "initial": {"equilibrium": [1.0, 0.0]},
        "horizon": 5.0, "sample_dt": 0.5,
    })
    assert main(["track", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "Hurwitz" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["track", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o")]) == 1


def test_bad_json_reports_location(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{ nope }")
    assert main(["track", "--config", str(path),
                 "--out", str(tmp_path / "o")]) == 1
    assert "broken.json" in capsys.readouterr().err


def test_usage_error_is_validation(capsys):
    assert main(["scan"]) == 1          # --config and --out are required


def test_shipped_configs_parse():
    for cfg in CONFIG_DIR.glob("*.json"):
        json.loads(cfg.read_text())
    assert (CONFIG_DIR / "fig4.json").exists()


def test_track_short_run_with_shipped_poles(tmp_path):
    cfg = json.loads((CONFIG_DIR / "fig8.json").read_text())
    cfg["horizon"] = 5.0
    cfg["sample_dt"] = 0.5
    out = tmp_path / "tr"
    path = write(tmp_path, "fig8s.json", cfg)
    assert main(["track", "--config", path, "--out", str(out)]) == 0
    traj = (out / "trajectory.csv").read_text().splitlines()
    assert len(traj) == 12              # header + 11 samples
    man = json.loads((out / "manifest.json").read_text())
    assert man["params_sha256"]
    assert man["config"]["y1ref"] == 1.2

import csv
import json
import math
import subprocess
import sys

import pytest

from juliatower.cli import main

CUBIC = ["--family", "cubic_pm_a", "--lambda=0.6;-0.77"]


def read_csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


class TestCommands:
    def test_dimension_chebyshev(self, tmp_path):
        assert run(tmp_path, "dimension", "--lambda=-2", "--depth", "14") == 0
        (row,) = read_csv(tmp_path / "dimension.csv")
        assert float(row["delta"]) == pytest.approx(1, abs=2e-2)
        header = [l for l in (tmp_path / "dimension.csv").read_text().splitlines() if l.startswith("#")]
        assert any(l.startswith("# seed ") for l in header)
        assert any(l.startswith("# config ") for l in header)

    def test_pressure_table(self, tmp_path):
        assert run(tmp_path, "pressure", "--lambda=0", "--t", "0,1,2", "--depth", "10") == 0
        rows = read_csv(tmp_path / "pressure.csv")
        assert [float(r["t"]) for r in rows] == [0, 1, 2]
        assert float(rows[1]["pressure"]) == pytest.approx(0, abs=1e-9)

    def test_chi_star_rejected(self, tmp_path, capsys):
        code = run(tmp_path, "tower-spectrum", "--lambda=-1.9", "--chi-star", "3")
        assert code == 2
        assert "1 < chi_star < sqrt(chi_hat)" in capsys.readouterr().err

    def test_numerical_failure(self, tmp_path, capsys):
        # c = 0.3 is not a landing parameter; Newton lands on a non-repelling solution
        code = run(tmp_path, "tower-spectrum", "--lambda=0.3")
        assert code == 3
        assert "error:" in capsys.readouterr().err

    def test_validation(self, tmp_path):
        assert run(tmp_path, "dimension") == 2
        assert run(tmp_path, "dimension", "--lambda=-2", "--depth", "0") == 2
        assert run(tmp_path, "dimension", "--lambda=-2", "--grid", "1,2") == 2
        assert run(tmp_path, "dimension", "--lambda=-2", "--family", "nope") == 2

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.yaml"
        cfg.write_text("lambda: -2\ndepth: 12\nt: [0.5]\n")
        assert main(["pressure", "--config", str(cfg), "--out", str(tmp_path), "--depth", "10"]) == 0
        rows = read_csv(tmp_path / "pressure.csv")
        assert float(rows[0]["t"]) == 0.5
        text = (tmp_path / "pressure.csv").read_text()
        assert '"depth": 10' in text

    def test_bad_config(self, tmp_path):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("- just\n- a list\n")
        assert main(["dimension", "--config", str(cfg), "--out", str(tmp_path)]) == 2

    def test_tower_spectrum(self, tmp_path):
        assert run(tmp_path, "tower-spectrum", "--lambda=-1.9", "--mesh", "128") == 0
        rep = json.loads((tmp_path / "tower_spectrum.json").read_text())
        assert rep["eta"] == pytest.approx(1, abs=2e-2)
        for key in ("t1", "t2", "lambda1", "lambda2", "gap", "mesh_density", "K_max", "tail_bound"):
            assert key in rep
        assert (tmp_path / "tower_geometry.csv").exists()

    def test_joint_pressure(self, tmp_path):
        assert run(tmp_path, "joint-pressure", "--lambda=0", "--lambda1=0.02", "--lambda2=0,0.02",
                   "--t", "0.5", "--t2", "0", "--depth", "8") == 0
        rep = json.loads((tmp_path / "joint_pressure.json").read_text())
        # t2 = 0 reduces to p(0.5) at c = 0.02, close to 0.5 log 2
        assert rep["value"] == pytest.approx(0.5 * math.log(2), abs=1e-3)
        assert rep["lambda2"] == [[0.0, 0.02]]

    def test_distance_symmetric(self, tmp_path):
        grid = "--grid=-0.01,0.01,-0.01,0.01,2,2"
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(a, "distance", *CUBIC, grid, "--depth", "5", "--from", "0,0", "--to", "1,1") == 0
        assert run(b, "distance", *CUBIC, grid, "--depth", "5", "--from", "1,1", "--to", "0,0") == 0
        da = json.loads((a / "distance.json").read_text())
        db = json.loads((b / "distance.json").read_text())
        assert da["distance"] > 0
        assert da["distance"] == db["distance"]
        assert da["path"] == db["path"][::-1]

    def test_diagnostics(self, tmp_path):
        assert run(tmp_path, "diagnostics", *CUBIC, "--depth", "6") == 0
        rep = json.loads((tmp_path / "diagnostics.json").read_text())
        assert rep["hyperbolic"]["free_critical"][0]["status"] == "attracted"
        assert 0 < rep["gamma"] <= 1


def test_deterministic(tmp_path):
    outs = []
    for name in ("one", "two"):
        d = tmp_path / name
        assert run(d, "metric-field", *CUBIC, "--grid=-0.01,0.01,-0.01,0.01,2,2", "--depth", "5",
                   "--seed", "7") == 0
        outs.append((d / "metric_field.csv").read_bytes())
    assert outs[0] == outs[1]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "juliatower", "dimension", "--lambda=0",
                           "--depth", "8", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().endswith("dimension.csv")

from __future__ import annotations

import json
import math
import subprocess
import sys

import pytest

from nbkam.cli import main
from nbkam.homothetic import orbit_action, orbit_at, two_body_orbit
from nbkam.mass_geometry import save_configuration

H = two_body_orbit()


@pytest.fixture
def files(tmp_path):
    save_configuration(orbit_at(H, 1.0), tmp_path / "x.json")
    save_configuration(orbit_at(H, 8.0), tmp_path / "y.json")
    (tmp_path / "bad.json").write_text(json.dumps({"problem": {"masses": [1, -1]}}))
    (tmp_path / "clash.json").write_text(json.dumps({"problem": {"masses": [1, 1, 1]}}))
    (tmp_path / "collide.json").write_text(json.dumps({"d": 2, "masses": [1, 1], "positions": [[0, 0], [0, 0]]}))
    return tmp_path


def _run(capsys, *argv):
    code = main(list(map(str, argv)))
    out, err = capsys.readouterr()
    return code, out, err


def test_central_config(capsys, tmp_path):
    code, out, _ = _run(capsys, "central-config", "--masses", "1,1,1", "--starts", "4")
    assert code == 0
    assert json.loads(out)["U0"] == pytest.approx(3.0, abs=1e-8)
    code, _, _ = _run(capsys, "central-config", "--masses", "1,1", "--out", tmp_path / "cc.json")
    assert code == 0
    cc = json.loads((tmp_path / "cc.json").read_text())
    code, out, _ = _run(capsys, "homothetic", "--central", tmp_path / "cc.json", "--nodes", "200")
    assert code == 0
    assert json.loads(out)["c"] == pytest.approx(1.4708, abs=1e-4)
    assert cc["d"] == 2
    code, out, _ = _run(capsys, "homothetic", "--central", tmp_path / "cc.json", "--t", "8")
    assert code == 0
    r = json.loads(out)["positions"]
    # [DERIVED] |r1 - r2| at t = 8 is c 8^(2/3) sqrt(2) for unit masses
    assert abs(r[0][0] - r[1][0]) == pytest.approx(1.4708413767 * 4 * 2**0.5, rel=1e-9)
    code, _, _ = _run(capsys, "central-config", "--masses", "1,1", "--seeds", "2")
    assert code == 0


def test_phi(capsys, files):
    code, out, _ = _run(capsys, "phi", "--from", files / "x.json", "--to", files / "y.json", "--nodes", "200")
    assert code == 0
    assert json.loads(out)["phi"] == pytest.approx(orbit_action(H, 1.0, 8.0), rel=5e-3)
    assert "trajectory" not in json.loads(out)
    code, out, _ = _run(capsys, "phi", "--from", files / "x.json", "--to", files / "y.json", "--nodes", "200",
                        "--backend", "both")
    assert code == 0
    assert json.loads(out)["backend_disagreement"] <= 1e-2


def test_busemann_and_calibrate(capsys, files):
    code, out, _ = _run(capsys, "busemann", "--point", files / "x.json", "--nodes", "200", "--gradient")
    assert code == 0
    doc = json.loads(out)
    assert doc["u"] == pytest.approx(-H.action_coefficient, rel=1e-2)
    assert doc["eikonal_residual"] <= 2e-2
    code, out, _ = _run(capsys, "calibrate", "--point", files / "x.json", "--nodes", "200")
    assert code == 0
    assert json.loads(out)["relative_defect"] <= 1e-2


def test_sample_field(capsys, tmp_path):
    grid = {"points": [orbit_at(H, 1.0).to_dict(), orbit_at(H, 2.0).to_dict()]}
    (tmp_path / "g.json").write_text(json.dumps(grid))
    code, out, _ = _run(capsys, "sample-field", "--grid", tmp_path / "g.json", "--nodes", "100", "--no-gradient")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("index,")
    assert len(lines) == 3


def test_verify_subset(capsys, tmp_path):
    out_path = tmp_path / "v.json"
    code, _, err = _run(capsys, "verify", "--check", "homothetic", "--check", "central_config", "--out", out_path)
    assert code == 0
    assert "[PASS] homothetic" in err
    doc = json.loads(out_path.read_text())
    assert doc["passed"] is True
    assert all("duration_s" not in c for c in doc["checks"])


@pytest.mark.parametrize("argv", [
    ["verify", "--config", "{bad}"],
    ["busemann", "--point", "{collide}"],
    ["phi", "--from", "{x}", "--to", "{x}", "--config", "{clash}"],
    ["central-config", "--config", "{bad}"],
    ["phi", "--from", "{missing}", "--to", "{x}"],
])
def test_usage_errors_exit_2(capsys, files, argv):
    names = {"bad": "bad.json", "collide": "collide.json", "x": "x.json", "clash": "clash.json",
             "missing": "missing.json"}
    argv = [a.format(**{k: files / v for k, v in names.items()}) for a in argv]
    code, _, err = _run(capsys, *argv)
    assert code == 2
    assert "error" in err


def test_parser_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["phi", "--bogus"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


def test_module_entry_point(files):
    proc = subprocess.run([sys.executable, "-m", "nbkam", "phi", "--from", str(files / "x.json"),
                           "--to", str(files / "y.json"), "--nodes", "64"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert math.isfinite(json.loads(proc.stdout)["phi"])

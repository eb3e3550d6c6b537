from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import replace

import pytest

from nbkam.experiments import (
    ConfigError,
    ExperimentConfig,
    check_eikonal,
    check_momentum_map,
    dump_json,
    field_csv,
    generic_points,
    golden_minimal_potential,
    grid_points,
    merge_config,
    minimal_orbit,
    run_verify,
    sample_field,
)

GRID = {
    "base": {"d": 2, "masses": [1.0, 1.0], "positions": [[0.5, 0.0], [-0.5, 0.0]]},
    "body": 0,
    "x": [-0.5, 0.5, 3],
    "y": [0.0, 0.0, 1],
}


@pytest.mark.parametrize("doc", [
    {"problem": {"masses": [1.0, -1.0]}},
    {"problem": {"masses": [1.0]}},
    {"solver": {"nodes": 8}},
    {"weak_kam": {"mode": "sideways"}},
    {"weak_kam": {"horizon": 0}},
    {"unknown": 1},
    {"solver": {"nodes": "many"}},
    {"problem": {"d": 2}, "weak_kam": {"generators": [[[0, 1, 0], [-1, 0, 0], [0, 0, 0]]]}},
])
def test_invalid_configs_rejected(doc):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(doc)


def test_config_roundtrip(tmp_path):
    cfg = ExperimentConfig(masses=(1.0, 2.0, 3.0), d=3, nodes=128, rng_seed=7)
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.load(path) == cfg
    path.write_text("{")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


def test_merge_config():
    doc = merge_config({"solver": {"nodes": 64}}, {"solver": {"backend": "time"}, "rng_seed": 3})
    cfg = ExperimentConfig.from_dict(doc)
    assert (cfg.nodes, cfg.backend, cfg.rng_seed) == (64, "time", 3)


def test_generic_points_deterministic():
    cfg = ExperimentConfig(masses=(1.0, 1.0, 1.0))
    a = generic_points(cfg, 5, stream=1)
    b = generic_points(cfg, 5, stream=1)
    c = generic_points(cfg, 5, stream=2)
    assert all((p.r == q.r).all() for p, q in zip(a, b))
    assert any((p.r != q.r).any() for p, q in zip(a, c))


def test_golden_values():
    assert golden_minimal_potential((1.0, 1.0, 1.0), 2) == pytest.approx(3.0)
    assert golden_minimal_potential((1.0, 1.0), 2) == pytest.approx(math.sqrt(0.5))
    assert golden_minimal_potential((1.0, 2.0, 3.0, 4.0), 2) is None


def test_verify_report_is_reproducible():
    cfg = ExperimentConfig(nodes=200, instances=3)
    a = run_verify(cfg, checks=["central_config", "homothetic", "phi"])
    b = run_verify(cfg, checks=["central_config", "homothetic", "phi"])
    assert dump_json(a) == dump_json(b)
    assert a["passed"]
    assert [c["name"] for c in a["checks"]] == ["central_config", "homothetic", "phi"]


def test_coarse_eikonal_is_reported_as_failure():
    cfg = ExperimentConfig(nodes=16, eikonal_points=2)
    res = check_eikonal(cfg, None)
    assert res.passed is False
    line = res.line()
    assert "FAIL" in line


def test_momentum_map_skipped_in_plane():
    res = check_momentum_map(ExperimentConfig(), None)
    assert res.passed is None
    assert res.to_dict()["status"] == "skipped"


def test_grid_points_and_errors():
    pts = grid_points(GRID)
    assert len(pts) == 3
    assert pts[0].r[0, 0] == -0.5
    with pytest.raises(ConfigError):
        grid_points({**GRID, "body": 5})
    with pytest.raises(ConfigError):
        grid_points({"x": [0, 1, 2]})
    with pytest.raises(ConfigError):
        grid_points({**GRID, "x": [0, 1]})


def test_sample_field_rows_and_csv():
    cfg = ExperimentConfig(nodes=64)
    spec = cfg.weak_kam_spec(minimal_orbit(cfg))
    pts = grid_points(GRID)
    rows = sample_field(pts, spec, None, gradient=False)
    assert [r["status"] for r in rows] == ["skipped", "ok", "ok"]
    assert rows[0]["reason"] == "collision"
    text = field_csv(rows, 2, 2)
    table = list(csv.DictReader(io.StringIO(text)))
    assert len(table) == 3
    assert table[0]["r0_0"] == "-0.5"
    assert table[0]["u"] == "nan"
    # bodies at +-0.5 on the axis lie on the ray: u = -K sqrt(|z|) = -2
    assert float(table[2]["u"]) == pytest.approx(-2.0, abs=1e-2)
    threaded = sample_field(pts, spec, None, gradient=False, threads=2)
    assert field_csv(threaded, 2, 2) == text


def test_unreachable_solver_budget_fails_cleanly():
    cfg = replace(ExperimentConfig(nodes=64, instances=2), max_iter=1)
    rep = run_verify(cfg, checks=["phi"])
    assert rep["passed"] is False

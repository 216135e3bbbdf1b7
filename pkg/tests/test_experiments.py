import json

import numpy as np
import pytest

from pufem.experiments import (
    ExperimentConfig,
    empirical_orders,
    parse_levels,
    read_csv,
    run_condition,
    run_cosine,
    run_offset_sweep,
    run_velocity,
    swirl_velocity,
    swirl_vorticity,
    sweep_offsets,
    write_csv,
)


def test_config_presets_and_overrides(tmp_path):
    cfg = ExperimentConfig.create("cosine-s1")
    assert (cfg.s, cfg.C) == (1, 1.0)
    assert cfg.sigma(2) == pytest.approx(0.25)
    assert ExperimentConfig.create("cosine-s2").sigma(2) == pytest.approx(0.375 * 0.5)
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"experiment": "condition", "levels": [3, 3], "C": 0.3}))
    cfg = ExperimentConfig.create(config_file=f, C=0.5)
    assert cfg.experiment == "condition" and cfg.levels == (3, 3) and cfg.C == 0.5
    with pytest.raises(ValueError):
        ExperimentConfig.create("cosine-s2", bogus=1)
    with pytest.raises(ValueError):
        ExperimentConfig.create("nope")
    with pytest.raises(ValueError):
        ExperimentConfig.create("cosine-s2", s=3)


def test_parse_levels_and_orders():
    assert parse_levels("1..4") == (1, 4) and parse_levels("2") == (2, 2)
    o = empirical_orders([1.0, 0.5, 0.125], [1, 0.5, 0.25])
    assert np.isnan(o[0]) and o[1:] == pytest.approx([1.0, 2.0])


def test_swirl_curl_matches_finite_differences(rng):
    x = rng.uniform(-0.35, 0.35, (50, 3))
    h = 1e-6
    J = np.empty((50, 3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, :, k] = (swirl_velocity(x + e) - swirl_velocity(x - e)) / (2 * h)
    curl = np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]], 1)
    np.testing.assert_allclose(swirl_vorticity(x), curl, atol=1e-7)
    div = J[:, 0, 0] + J[:, 1, 1] + J[:, 2, 2]
    assert np.abs(div).max() < 1e-8
    np.testing.assert_allclose(swirl_vorticity(x[:, :2]), swirl_vorticity(np.c_[x[:, :2], 0 * x[:, 0]])[:, 2])
    assert np.all(swirl_vorticity(np.array([[0.5, 0.1, 0.0]])) == 0)


def test_empty_level_range_gives_header_only(tmp_path):
    cfg = ExperimentConfig.create("cosine-s2", levels=(3, 2), out=str(tmp_path))
    path = write_csv(run_cosine(cfg), cfg)
    cols, rows = read_csv(path)
    assert rows == [] and cols[0] == "level"
    assert path.read_text().startswith("# pufem")


def test_cosine_small_run_is_deterministic(tmp_path):
    cfg = ExperimentConfig.create("cosine-s2", levels=(0, 2), out=str(tmp_path / "a"))
    p1 = write_csv(run_cosine(cfg), cfg)
    p2 = write_csv(run_cosine(cfg), cfg, tmp_path / "b")
    assert p1.read_bytes() == p2.read_bytes()
    _, rows = read_csv(p1)
    assert [r["status"] for r in rows] == ["ok"] * 3
    assert float(rows[-1]["l2_error"]) < float(rows[0]["l2_error"])
    assert max(float(r["moment_error"]) for r in rows) < 1e-9
    assert (tmp_path / "a" / "cosine_s2.runtime.csv").exists()


def test_velocity_small_run():
    res = run_velocity(ExperimentConfig.create("velocity", levels=(1, 2)))
    assert res.column("velocity_l2")[-1] < res.column("velocity_l2")[0]
    assert res.column("vorticity_l2")[-1] < res.column("vorticity_l2")[0]


def test_condition_aligned_is_flat_in_epsilon():
    # C = 0.25, level 2: sigma = 1/8 divides the cube, so j is empty
    res = run_condition(ExperimentConfig.create("condition", levels=(2, 2)), [1e-3, 1e-1])
    statuses = [r[res.columns.index("status")] for r in res.rows]
    assert statuses[0] == statuses[1]
    assert res.rows[0][res.columns.index("cut_elements")] == 0
    with pytest.raises(ValueError):
        run_condition(ExperimentConfig.create("condition"), [])


def test_offset_sweep_periodicity():
    cfg = ExperimentConfig.create("offset-sweep", levels=(1, 1), n_offsets=3)
    sigma = cfg.sigma(1)
    offs = sweep_offsets(cfg)
    assert offs.shape == (3, 3) and np.all((offs >= 0) & (offs < sigma))
    res = run_offset_sweep(cfg, [[0.0, 0.0, 0.0], [sigma, sigma, sigma]])
    lam = res.column("lambda_min")
    assert lam[0] == pytest.approx(lam[1], rel=1e-8)


def test_offset_sweep_sliver_without_stabilization():
    """A sliver cut with eps = 0 collapses the smallest Ritz value."""
    cfg = ExperimentConfig.create("offset-sweep", levels=(2, 2), epsilon=0.0)
    sigma = cfg.sigma(2)
    # boundary 1e-3 sigma inside the last element layer
    sliver = (0.5 - 1e-3 * sigma) % sigma
    stab = run_offset_sweep(ExperimentConfig.create("offset-sweep", levels=(2, 2)), [[sliver] * 3])
    bare = run_offset_sweep(cfg, [[sliver] * 3])
    s_lam = stab.column("lambda_min")[0]
    b_lam = bare.column("lambda_min")[0]
    assert b_lam < 1e-2 * s_lam

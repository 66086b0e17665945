import json

import numpy as np
import pytest

from chbfem import cli
from chbfem.cli import (CSV_HEADER, ConfigError, SimulationConfig,
                        config_from_dict, load_config, main, run_experiment,
                        write_metrics_csv, write_vtk)
from chbfem.linalg import LinearSolveFailure
from chbfem.mesh import build_unit_square_mesh
from chbfem.model import MaterialParams
from chbfem.solvers import ChbSystem


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def small_config(**overrides):
    data = dict(n=4, num_steps=1, strategy="both", vtk_every=0)
    data.update(overrides)
    return config_from_dict(data)


def test_empty_config_gives_table_defaults(tmp_path):
    cfg = load_config(write_config(tmp_path, {}))
    assert cfg.gamma == 5.0
    assert cfg.ell == 2.0e-2
    assert cfg.mobility == 1.0
    assert cfg.xi == 0.5
    assert cfg.phi_bar == 0.5
    assert cfg.M0 == 1.0 and cfg.M1 == 0.1
    assert cfg.kappa0 == 1.0 and cfg.kappa1 == 0.1
    assert cfg.alpha0 == 1.0 and cfg.alpha1 == 0.5
    assert cfg.tau == 1.0e-5
    assert cfg.tol == 1.0e-6
    assert cfg.max_iter == 100
    assert cfg.n == 65
    assert np.allclose(cfg.C0, [[100, 20, 0], [20, 100, 0], [0, 0, 100]])
    assert np.allclose(cfg.C1, [[1, 0.1, 0], [0.1, 1, 0], [0, 0, 1]])


def test_single_override(tmp_path):
    cfg = load_config(write_config(tmp_path, {"gamma": 0.5}))
    assert cfg.gamma == 0.5
    assert cfg.ell == 2.0e-2


def test_negative_tau_rejected_by_name(tmp_path):
    with pytest.raises(ConfigError, match="tau"):
        load_config(write_config(tmp_path, {"tau": -1}))


def test_all_violations_listed(tmp_path):
    with pytest.raises(ConfigError) as exc_info:
        load_config(write_config(tmp_path, {"tau": -1, "gamma": 0, "n": 0}))
    msg = str(exc_info.value)
    assert "tau" in msg and "gamma" in msg and "n must be" in msg


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "gamma": 5,\n  oops\n}')
    with pytest.raises(ConfigError, match="line 3"):
        load_config(path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="gama"):
        load_config(write_config(tmp_path, {"gama": 1.0}))


def test_sweep_validation(tmp_path):
    with pytest.raises(ConfigError, match="sweep param"):
        load_config(write_config(tmp_path, {"sweep": {"param": "tau"}}))
    with pytest.raises(ConfigError, match="positive"):
        load_config(write_config(tmp_path, {"sweep": {"param": "gamma",
                                                      "values": [1.0, -2.0]}}))


def test_config_round_trip(tmp_path):
    cfg = load_config(write_config(tmp_path, {"gamma": 2.5, "n": 8,
                                              "sweep": {"param": "xi",
                                                        "values": [0.5, 1.0]}}))
    again = config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_default_sweep_grids():
    cfg = config_from_dict({"sweep": {"param": "gamma"}})
    assert cfg.sweep_plan() == ("gamma", [0.1, 0.5, 1.0, 5.0, 10.0, 25.0])
    cfg = config_from_dict({"sweep": {"param": "xi"}})
    assert cfg.sweep_plan() == ("xi", [0.25, 0.5, 1.0, 1.5, 2.0])
    assert config_from_dict({}).sweep_plan() == ("none", [None])


def test_material_params_from_config():
    cfg = small_config(gamma=3.0)
    pa = cfg.material_params()
    assert isinstance(pa, MaterialParams)
    assert pa.gamma == 3.0
    assert cfg.material_params(gamma=9.0).gamma == 9.0
    assert cfg.material_params(xi=2.0).xi == 2.0


def test_run_experiment_row_counts_and_order():
    cfg = small_config(sweep={"param": "gamma", "values": [1.0, 5.0, 25.0]})
    records = run_experiment(cfg)
    assert len(records) == 6
    assert [r.param_value for r in records] == [1.0, 1.0, 5.0, 5.0, 25.0, 25.0]
    assert [r.strategy for r in records] == ["monolithic", "splitting"] * 3
    assert all(r.param_name == "gamma" for r in records)


def test_baseline_run_converges_both_strategies():
    records = run_experiment(small_config(num_steps=2))
    assert len(records) == 2
    assert all(r.converged for r in records)
    assert all(r.param_name == "none" for r in records)
    split = next(r for r in records if r.strategy == "splitting")
    mono = next(r for r in records if r.strategy == "monolithic")
    assert split.outer_iters > 0
    assert mono.outer_iters == 0
    assert mono.inner_newton_iters > 0


def test_failed_runs_are_recorded_rows_not_crashes():
    cfg = small_config(max_iter=1, num_steps=1,
                       sweep={"param": "xi", "values": [0.5, 2.0]},
                       strategy="splitting")
    records = run_experiment(cfg)
    assert len(records) == 2
    assert all(not r.converged for r in records)
    assert all(not r.solver_fault for r in records)
    assert all(r.inner_newton_iters >= 1 for r in records)


def test_metrics_csv_schema(tmp_path):
    records = run_experiment(small_config(num_steps=1, strategy="splitting"))
    path = tmp_path / "metrics.csv"
    write_metrics_csv(records, path)
    lines = path.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 2
    fields = lines[1].split(",")
    assert fields[0] == "none"
    assert fields[2] == "splitting"
    assert fields[3] == "true"
    int(fields[4]), int(fields[5]), float(fields[6])


def test_metrics_csv_failed_row(tmp_path):
    records = run_experiment(small_config(num_steps=1, strategy="monolithic",
                                          max_iter=1))
    path = tmp_path / "m.csv"
    write_metrics_csv(records, path)
    row = path.read_text().splitlines()[1].split(",")
    assert row[3] == "false"
    assert int(row[5]) == 1  # iterations consumed before the abort


def test_metrics_csv_deterministic_apart_from_wall_time(tmp_path):
    cfg = small_config(num_steps=1, strategy="splitting",
                       sweep={"param": "gamma", "values": [1.0, 5.0]})
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    write_metrics_csv(run_experiment(cfg), a)
    write_metrics_csv(run_experiment(cfg), b)

    def strip_wall(text):
        return [line.rsplit(",", 1)[0] for line in text.splitlines()]

    assert strip_wall(a.read_text()) == strip_wall(b.read_text())


def test_write_metrics_requires_records(tmp_path):
    with pytest.raises(ValueError):
        write_metrics_csv([], tmp_path / "x.csv")


def parse_vtk(path):
    """Minimal legacy-VTK reader for the writer's output."""
    tokens = path.read_text().splitlines()
    data = {"points": [], "cells": [], "point_data": {}, "cell_data": {}}
    i = 0
    section = None
    target = None
    while i < len(tokens):
        line = tokens[i]
        if line.startswith("POINTS"):
            count = int(line.split()[1])
            for j in range(count):
                data["points"].append([float(v) for v in tokens[i + 1 + j].split()])
            i += count
        elif line.startswith("CELLS"):
            count = int(line.split()[1])
            for j in range(count):
                data["cells"].append([int(v) for v in tokens[i + 1 + j].split()[1:]])
            i += count
        elif line.startswith("POINT_DATA"):
            section = "point_data"
        elif line.startswith("CELL_DATA"):
            section = "cell_data"
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            count = len(data["points"]) if section == "point_data" else len(data["cells"])
            vals = [float(tokens[i + 2 + j]) for j in range(count)]
            data[section][name] = np.array(vals)
            i += count + 1
        elif line.startswith("VECTORS"):
            name = line.split()[1]
            count = len(data["points"]) if section == "point_data" else len(data["cells"])
            vals = [[float(v) for v in tokens[i + 1 + j].split()] for j in range(count)]
            data[section][name] = np.array(vals)
            i += count
        i += 1
    return data


def test_vtk_round_trip(tmp_path):
    mesh = build_unit_square_mesh(4)
    system = ChbSystem(mesh, MaterialParams())
    state = system.initial_state()
    rng = np.random.default_rng(8)
    state.mu = rng.normal(size=system.nv)
    state.u = rng.normal(size=2 * system.nv)
    state.q = rng.normal(size=system.ne)
    path = tmp_path / "state.vtk"
    write_vtk(state, mesh, path)

    data = parse_vtk(path)
    assert np.allclose(np.array(data["points"])[:, :2], mesh.vertices, atol=1e-9)
    assert np.array_equal(np.array(data["cells"]), mesh.cells)
    # initial phi is the 0/1 half-domain step, p is identically zero
    assert np.allclose(data["point_data"]["phi"], state.phi, atol=1e-9)
    assert set(np.unique(data["point_data"]["phi"])) == {0.0, 1.0}
    assert np.allclose(data["cell_data"]["p"], 0.0)
    assert np.allclose(data["point_data"]["mu"], state.mu, atol=1e-9)
    u = np.column_stack([state.u[0::2], state.u[1::2]])
    assert np.allclose(data["point_data"]["u"][:, :2], u, atol=1e-9)
    assert data["cell_data"]["q"].shape == (mesh.num_cells, 3)


def test_vtk_flux_vectors_at_centroids(tmp_path):
    # a constant flux field is reproduced exactly at the centroids
    mesh = build_unit_square_mesh(3)
    system = ChbSystem(mesh, MaterialParams())
    state = system.initial_state()
    from chbfem.fem import interpolate, rt0_space
    state.q = interpolate(rt0_space(mesh), lambda x, y: np.array([1.5, -0.5])).coefficients
    path = tmp_path / "flux.vtk"
    write_vtk(state, mesh, path)
    data = parse_vtk(path)
    assert np.allclose(data["cell_data"]["q"][:, :2], [1.5, -0.5], atol=1e-9)


def test_main_runs_and_writes_outputs(tmp_path, capsys):
    cfg_path = write_config(tmp_path, {"n": 4, "num_steps": 1, "vtk_every": 1})
    out = tmp_path / "out"
    code = main(["run", "--config", str(cfg_path), "--strategy", "splitting",
                 "--out", str(out)])
    assert code == 0
    assert (out / "metrics.csv").exists()
    assert (out / "base_splitting" / "state_0000.vtk").exists()
    assert (out / "base_splitting" / "state_0001.vtk").exists()
    assert "metrics written" in capsys.readouterr().out


def test_main_desk_flag_applies_profile(tmp_path, monkeypatch):
    seen = {}

    def fake_run(config):
        seen["n"] = config.n
        seen["steps"] = config.num_steps
        return [cli.RunRecord("none", 0.0, "splitting", True, 1, 1, 0.0)]

    monkeypatch.setattr(cli, "run_experiment", fake_run)
    cfg_path = write_config(tmp_path, {})
    code = main(["run", "--config", str(cfg_path), "--desk",
                 "--out", str(tmp_path / "o")])
    assert code == 0
    assert seen == {"n": 16, "steps": 20}


def test_main_sweep_flag(tmp_path, monkeypatch):
    seen = {}

    def fake_run(config):
        seen["plan"] = config.sweep_plan()
        return [cli.RunRecord("xi", 0.5, "splitting", True, 1, 1, 0.0)]

    monkeypatch.setattr(cli, "run_experiment", fake_run)
    cfg_path = write_config(tmp_path, {})
    assert main(["run", "--config", str(cfg_path), "--sweep", "xi",
                 "--out", str(tmp_path / "o")]) == 0
    assert seen["plan"] == ("xi", [0.25, 0.5, 1.0, 1.5, 2.0])


def test_main_config_error_exit_code(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    assert "error:" in capsys.readouterr().err


def test_main_solver_fault_exit_code(tmp_path, monkeypatch):
    def boom(self, phi, u, state_prev, config=None, storage_prev=None):
        raise LinearSolveFailure("synthetic breakdown")

    monkeypatch.setattr(ChbSystem, "solve_flow", boom)
    cfg_path = write_config(tmp_path, {"n": 4, "num_steps": 1,
                                       "strategy": "splitting"})
    code = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert code == 2
    lines = (tmp_path / "o" / "metrics.csv").read_text().splitlines()
    assert len(lines) == 2 and ",false," in lines[1]

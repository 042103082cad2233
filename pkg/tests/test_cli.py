import json

import numpy as np
import pytest

from oracles import rel_linf, sigmoid, state_ode
from phasectl import cli
from phasectl.export import read_csv_columns

MODEL = {"alpha": 0.1, "beta": 0.0, "proliferation": {"name": "sigmoid", "p0": 1.0, "k": 2.0},
         "grid": {"dim": 1, "n": 33}, "n_steps": 50, "newton_tol": 1e-10}
PROBLEM = {"weights": {"b0": 1.0, "b1": 1.0, "b2": 0.5, "b3": 0.5},
           "phi_q": {"expr": "cosine", "amplitude": 0.5, "modes": [1]},
           "sigma_q": 0.4, "sigma_omega": 0.5, "bounds": {"lo": -2.0, "hi": 2.0}}


def write_config(path, **blocks):
    cfg = {"version": 1, "model": dict(MODEL)}
    for key, val in blocks.items():
        if key == "model":
            cfg["model"] = {**MODEL, **val}
        else:
            cfg[key] = val
    path.write_text(json.dumps(cfg))
    return str(path)


def run(args, capsys):
    code = cli.main(args)
    err = capsys.readouterr().err
    return code, (json.loads(err.strip().splitlines()[-1]) if err.strip() else None)


def test_simulate_zero_config(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", initial={"phi0": 0.0, "sigma0": 0.0})
    code, _ = run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    traj = read_csv_columns(tmp_path / "o" / "trajectory.csv")
    for col in ("mu", "phi", "sigma"):
        assert np.all(traj[col] == 0)
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["mass_residual"] == 0


def test_simulate_constant_config_matches_ode(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", model={"alpha": 0.2, "n_steps": 200, "grid": {"dim": 1, "n": 5}},
                       initial={"phi0": 0.3, "sigma0": 0.8}, control=0.5)
    code, _ = run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    ref = state_ode(0.2, 0.0, 0.3, 0.8, 0.5, sigmoid(1.0, 2.0))(1.0)
    for i, name in enumerate(("mu", "phi", "sigma")):
        assert rel_linf(summary["final"][name]["mean"], ref[i]) < 5 * 0.005


def test_outputs_are_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", problem=PROBLEM, control=1.0,
                       initial={"phi0": {"expr": "cosine", "amplitude": 0.6}, "sigma0": 0.5})
    for out in ("a", "b"):
        assert run(["gradient-check", "--config", cfg, "--out", str(tmp_path / out)],
                   capsys)[0] == 0
        assert run(["simulate", "--config", cfg, "--out", str(tmp_path / out)], capsys)[0] == 0
    for name in ("gradient_check.json", "trajectory.csv", "diagnostics.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # timestamps go to the sidecar log only
    assert (tmp_path / "a" / "run.log").exists()


def test_csv_format(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", initial={"phi0": 0.1, "sigma0": 0.3},
                       command={"save_stride": 25})
    run(["simulate", "--config", cfg, "--out", str(tmp_path)], capsys)
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,x,mu,phi,sigma"
    assert len(lines) == 1 + 3 * 33
    assert lines[1].split(",")[3] == "0.10000000000000001"


def test_gradient_check_default_coarse(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", problem=PROBLEM,
                       control={"sum": [1.0, {"expr": "cosine", "amplitude": 0.1, "modes": [2]}]},
                       initial={"phi0": {"expr": "cosine", "amplitude": 0.6},
                                "sigma0": {"expr": "cosine", "amplitude": 0.1, "offset": 0.5}})
    code, _ = run(["gradient-check", "--config", cfg, "--out", str(tmp_path), "--threads", "2"],
                  capsys)
    rep = json.loads((tmp_path / "gradient_check.json").read_text())
    assert code == 0 and rep["passed"] and rep["max_rel_error"] < 1e-2


@pytest.mark.parametrize("model,problem", [
    ({"alpha": 1.0}, None),
    ({"beta": -0.5}, None),
    ({}, {**PROBLEM, "weights": {"b0": 0, "b1": 0, "b2": 0, "b3": 0}}),
    ({}, {**PROBLEM, "bounds": {"lo": 1.0, "hi": 0.0}}),
    ({"grid": {"dim": 3, "n": 5}}, None),
])
def test_validation_exit_code(tmp_path, capsys, model, problem):
    blocks = {"model": model}
    if problem is not None:
        blocks["problem"] = problem
    cfg = write_config(tmp_path / "c.json", **blocks)
    code, err = run(["simulate", "--config", cfg, "--out", str(tmp_path)], capsys)
    assert code == 2 and err["exit_code"] == 2 and err["error"]


def test_missing_bounds_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", problem={**PROBLEM, "bounds": {}})
    assert run(["optimize", "--config", cfg, "--out", str(tmp_path)], capsys)[0] == 2


def test_bad_config_files(tmp_path, capsys):
    (tmp_path / "bad.json").write_text("{not json")
    assert run(["simulate", "--config", str(tmp_path / "bad.json")], capsys)[0] == 2
    (tmp_path / "v.json").write_text(json.dumps({"version": 2, "model": MODEL}))
    assert run(["simulate", "--config", str(tmp_path / "v.json")], capsys)[0] == 2
    assert run(["simulate", "--config", str(tmp_path / "missing.json")], capsys)[0] == 2


def test_thread_env(tmp_path, capsys, monkeypatch):
    cfg = write_config(tmp_path / "c.json")
    monkeypatch.setenv("PHASECTL_THREADS", "many")
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path)], capsys)[0] == 2
    monkeypatch.setenv("PHASECTL_THREADS", "2")
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path)], capsys)[0] == 0


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", model={"newton_max_iter": 1, "newton_tol": 1e-15},
                       initial={"phi0": {"expr": "cosine", "amplitude": 0.9}})
    code, err = run(["simulate", "--config", cfg, "--out", str(tmp_path)], capsys)
    assert code == 3 and err["error"] in ("NewtonError", "LineSearchError")


def test_optimize_pure_control_cost(tmp_path, capsys):
    prob = {"weights": {"b0": 1.0}, "bounds": {"lo": 0.5, "hi": 1.0}}
    cfg = write_config(tmp_path / "c.json", problem=prob, control=0.8,
                       model={"n_steps": 10, "grid": {"dim": 1, "n": 9}})
    assert run(["optimize", "--config", cfg, "--out", str(tmp_path)], capsys)[0] == 0
    u = read_csv_columns(tmp_path / "control.csv")["u"]
    np.testing.assert_allclose(u, 0.5)
    rep = json.loads((tmp_path / "optimize.json").read_text())
    assert rep["converged"] and rep["variational_inequality"]["passed"]
    hist = read_csv_columns(tmp_path / "history.csv")
    assert list(hist) == ["iter", "cost", "stationarity", "step", "newton_iters"]


def test_synthetic_targets_from_run(tmp_path, capsys):
    model = {"n_steps": 20, "grid": {"dim": 1, "n": 17}, "newton_tol": 1e-12}
    initial = {"phi0": {"expr": "cosine", "amplitude": 0.5}, "sigma0": 0.3}
    src = write_config(tmp_path / "src.json", model=model, initial=initial,
                       control={"expr": "cosine", "amplitude": 0.6, "offset": 0.4})
    assert run(["simulate", "--config", src, "--out", str(tmp_path / "ref")], capsys)[0] == 0
    target = {"from_run": str(tmp_path / "ref" / "trajectory.csv")}
    prob = {"weights": {"b0": 0.1, "b1": 1.0, "b2": 1.0, "b3": 1.0}, "phi_q": target,
            "sigma_q": target, "sigma_omega": target, "bounds": {"lo": 0.0, "hi": 1.0}}
    cfg = write_config(tmp_path / "opt.json", model=model, initial=initial, problem=prob,
                       control=0.5, command={"optimize": {"tol": 1e-7}})
    code, _ = run(["optimize", "--config", cfg, "--out", str(tmp_path / "opt")], capsys)
    rep = json.loads((tmp_path / "opt" / "optimize.json").read_text())
    assert code == 0 and rep["final_stationarity"] <= 1e-7


def test_reconstruct_round_trip(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", model={"grid": {"dim": 2, "n": 17}},
                       initial={"phi0": {"sum": [{"expr": "gaussian", "amplitude": 0.8,
                                                  "center": [0.5, 0.5], "width": 0.2},
                                                 {"constant": -0.3}]}})
    assert run(["reconstruct-ic", "--config", cfg, "--out", str(tmp_path)], capsys)[0] == 0
    rep = json.loads((tmp_path / "reconstruct.json").read_text())
    assert rep["recovery_error_Linf"] < 1e-9


def test_sweep_state_zero_instance(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", model={"n_steps": 10},
                       command={"sweep": {"betas": [0.1, 0.01, 0.001]}})
    assert run(["sweep", "--kind", "state", "--config", cfg, "--out", str(tmp_path)],
               capsys)[0] in (0, 4)
    table = read_csv_columns(tmp_path / "sweep_state.csv")
    for col in table:
        if col.startswith("gap_"):
            assert np.all(table[col] == 0)


def test_sweep_adjoint_verdict_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", problem=PROBLEM, control=1.0,
                       initial={"phi0": {"expr": "cosine", "amplitude": 0.6}, "sigma0": 0.5},
                       command={"sweep": {"betas": [0.1, 0.01], "decay": 1e-9}})
    code, err = run(["sweep", "--kind", "adjoint", "--config", cfg, "--out", str(tmp_path)],
                    capsys)
    assert code == 4 and err["exit_code"] == 4
    summary = json.loads((tmp_path / "sweep_adjoint.json").read_text())
    assert summary["verdicts"]["beta_q_decay"] is False


def test_field_file(tmp_path, capsys):
    x = np.linspace(0, 1, 33)
    (tmp_path / "phi.csv").write_text("x,value\n" + "".join(f"{a},{0.2 * np.cos(np.pi * a)}\n" for a in x))
    cfg = write_config(tmp_path / "c.json", initial={"phi0": {"file": "phi.csv"}})
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")], capsys)[0] == 0
    (tmp_path / "short.csv").write_text("value\n1\n2\n")
    cfg = write_config(tmp_path / "d.json", initial={"phi0": {"file": "short.csv"}})
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")], capsys)[0] == 2

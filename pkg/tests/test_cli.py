import json
import subprocess
import sys

import numpy as np
import pytest

from quasipart import estimation
from quasipart.cli import main, read_points
from quasipart.density import MixtureModel, ProductDensity, QuasiGaussian1D, load_model, save_model
from quasipart.estimation import log_likelihood


def data_rows(text):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return lines[0], lines[1:]


@pytest.fixture
def models(tmp_path):
    paths = []
    for a in (0.0, 2.0):
        p = tmp_path / f"h{int(a)}.json"
        save_model(p, MixtureModel.single(QuasiGaussian1D.from_mass_split(a, 0.0, 0.0, 1.0, 0.5)))
        paths.append(str(p))
    return paths


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_atom_only(tmp_path, capsys):
    p = tmp_path / "atom.json"
    save_model(p, MixtureModel.atom_only((1.5, -2.0)))
    code, out, _ = run(["simulate", "--model", str(p), "--n", "5"], capsys)
    assert code == 0
    header, rows = data_rows(out)
    assert header == "x_1,x_2"
    assert rows == ["1.5,-2.0"] * 5
    assert out.startswith("# reproduce: quasipart simulate --model ")


def test_fit_recovers_single_component(tmp_path, capsys):
    model = tmp_path / "one.json"
    save_model(model, MixtureModel.single(QuasiGaussian1D.from_mass_split(0.0, 0.0, 1.0, 1.0, 0.5)))
    data = tmp_path / "x.csv"
    fitted = tmp_path / "fit.json"
    assert main(["simulate", "--model", str(model), "--n", "1500", "--output", str(data)]) == 0
    assert main(["fit", "--input", str(data), "--n-max", "3", "--output", str(fitted)]) == 0
    doc = json.loads(fitted.read_text())
    assert doc["fit"]["n_selected"] == 1
    # the written model reproduces the reported likelihood on the training data
    ll = log_likelihood(load_model(fitted), read_points(data))
    assert ll == pytest.approx(doc["fit"]["log_likelihood"], rel=1e-12)


def test_classify_boundary(tmp_path, capsys, models):
    pts = tmp_path / "p.csv"
    pts.write_text("x\n0.99\n1.01\n")
    code, out, _ = run(["classify", "--model", models[0], "--model", models[1], "--input", str(pts)], capsys)
    assert code == 0
    header, rows = data_rows(out)
    assert header == "x_1,label,g_0,g_1"
    assert [r.split(",")[1] for r in rows] == ["0", "1"]


def test_risk_writes_json_and_csv(tmp_path, models):
    out = tmp_path / "risk.json"
    assert main(["risk", "--model", models[0], "--model", models[1], "--output", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["risk"]["z"] == pytest.approx(0.31731050786291415, abs=1e-8)
    _, rows = data_rows((tmp_path / "risk.csv").read_text())
    assert len(rows) == 4


def test_grid_lp_agrees_with_argmin(models, capsys):
    code, out, _ = run(["grid-lp", "--model", models[0], "--model", models[1], "--grid-resolution", "60",
                        "--bounds=-6:8"], capsys)
    assert code == 0
    assert "# lp_label_mismatches: 0" in out
    header, rows = data_rows(out)
    assert header == "x_1,label,min_cost,lp_label"
    assert len(rows) == 60


def test_polar_test_command(tmp_path, capsys):
    pts = tmp_path / "p.csv"
    np.savetxt(pts, np.random.default_rng(0).normal(size=(2000, 2)), delimiter=",")
    code, out, _ = run(["polar-test", "--input", str(pts)], capsys)
    assert code == 0
    res = json.loads(out)["polar_test"]
    assert res["dof"] == 49
    assert sum(map(sum, res["table"])) == 2000


def test_recovery_command(tmp_path, capsys):
    p = tmp_path / "g.json"
    save_model(p, MixtureModel.single(ProductDensity((QuasiGaussian1D.from_mass_split(0.0, 0.0, 0.0, 1.0),))))
    code, out, _ = run(["recovery", "--model", str(p), "--sizes", "300", "--trials", "2", "--n-max", "2"], capsys)
    assert code == 0
    header, rows = data_rows(out)
    assert header == "n,trial,n_hat,sqrt_n_dev"
    assert len(rows) == 2


@pytest.mark.parametrize("argv, fragment", [
    (["simulate", "--n", "5"], "--model"),
    (["fit"], "--input"),
    (["fit", "--input", "/nonexistent/x.csv"], "--input"),
    (["nonsense"], "invalid choice"),
])
def test_input_errors_exit_1(argv, fragment, capsys):
    code, _, err = run(argv, capsys)
    assert code == 1
    assert fragment in err


def test_bad_csv_cell_names_the_field(tmp_path, capsys):
    pts = tmp_path / "p.csv"
    pts.write_text("1.0,2.0\n3.0,inf\n")
    code, _, err = run(["fit", "--input", str(pts)], capsys)
    assert code == 1
    assert "row 2, column 2" in err


def test_bad_model_names_the_field(tmp_path, capsys):
    p = tmp_path / "bad.json"
    marginal = {"a": 0.0, "alpha_neg": 0.0, "alpha_pos": 0.0, "sigma": -1.0, "c_neg": 1.0, "c_pos": 1.0}
    p.write_text(json.dumps({"dim": 1, "atom": None, "components": [{"weight": 1.0, "marginals": [marginal]}]}))
    code, _, err = run(["simulate", "--model", str(p), "--n", "3"], capsys)
    assert code == 1
    assert "--model[0]" in err
    assert "components[0].marginals[0].sigma" in err


def test_identical_points_exit_1(tmp_path, capsys):
    pts = tmp_path / "p.csv"
    pts.write_text("0.0\n" * 50)
    code, _, err = run(["fit", "--input", str(pts)], capsys)
    assert code == 1
    assert "identical" in err


def test_numerical_failure_exits_2(tmp_path, capsys, monkeypatch):
    pts = tmp_path / "p.csv"
    pts.write_text("0.0\n1.0\n2.0\n")

    def fail(*args, **kwargs):
        raise estimation.FitError("no candidate produced a finite likelihood")

    monkeypatch.setattr(estimation, "fit", fail)
    code, _, err = run(["fit", "--input", str(pts)], capsys)
    assert code == 2
    assert err.startswith("numerical failure")


def test_config_file_and_override(tmp_path, capsys, models):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": models, "grid-resolution": 40, "bounds": "-6:8"}))
    code, out, _ = run(["grid-lp", "--config", str(cfg)], capsys)
    assert code == 0
    assert len(data_rows(out)[1]) == 40
    code, out, _ = run(["grid-lp", "--config", str(cfg), "--grid-resolution", "30"], capsys)
    assert len(data_rows(out)[1]) == 30
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["grid-lp", "--config", str(cfg)], capsys)[0] == 1


def test_simulate_is_byte_identical_across_processes(tmp_path):
    p = tmp_path / "m.json"
    save_model(p, MixtureModel((0.4, 0.6), (
        ProductDensity((QuasiGaussian1D.from_mass_split(0.0, 0.5, 1.0, 1.0, 0.3),)),
        ProductDensity((QuasiGaussian1D.from_mass_split(4.0, -0.5, 0.0, 0.7, 0.6),)))))
    cmd = [sys.executable, "-m", "quasipart", "simulate", "--model", str(p), "--n", "200", "--seed", "11"]
    a = subprocess.run(cmd, capture_output=True, check=True).stdout
    b = subprocess.run(cmd, capture_output=True, check=True).stdout
    assert a == b
    c = subprocess.run(cmd[:-1] + ["12"], capture_output=True, check=True).stdout
    assert a != c

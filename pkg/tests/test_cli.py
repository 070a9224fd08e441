import json

import pandas as pd
import pytest

from app.cli import main
from app.services.car_datagen import COUNTRY, generate_base_dataset
from app.services.experiment import read_results


def test_generate_and_describe(tmp_path, capsys):
    out = tmp_path / "cars.csv"
    assert main(["generate", "--rows", "2000", "--seed", "1", "--out", str(out)]) == 0
    assert main(["describe", "--data", str(out)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["rows"] == 2000
    assert info["card_signal"] == 5


def test_sweep_to_csv(tmp_path):
    out = tmp_path / "sweep.csv"
    argv = ["sweep", "--objective", "plant-fl", "--N", "4000", "--Ntest", "1000", "--n-grid", "100", "2000",
            "--base-rows", "8000", "--base-seed", "2", "--out", str(out)]
    assert main(argv) == 0
    rows = read_results(out)
    assert [r.n for r in rows] == [100, 2000]


def test_sweep_config_file_overrides_flags(tmp_path):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"n_grid": [300], "N": 4000, "N_test": 1000, "dataset": {"rows": 6000}}))
    out = tmp_path / "sweep.json"
    assert main(["sweep", "--config", str(config), "--n-grid", "100", "--format", "json", "--out", str(out)]) == 0
    assert [r["n"] for r in json.loads(out.read_text())] == [300]


def test_bounds_command(tmp_path):
    data = tmp_path / "collective.csv"
    generate_base_dataset(3000, seed=4).write_csv(data)
    out = tmp_path / "report.json"
    assert main(["bounds", "--data", str(data), "--objective", "unplant-adaptive", "--N", "10000",
                 "--Ntest", "1000", "--ne", "600", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["objective"] == "unplanting"
    assert report["n"] == 3000
    assert "R(n-n_e)" in report["r_terms"]


def test_bounds_command_with_custom_transformation(tmp_path):
    data = tmp_path / "collective.csv"
    generate_base_dataset(3000, seed=4).write_csv(data)
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"fix": {COUNTRY: "C4"}}))
    out = tmp_path / "report.json"
    assert main(["bounds", "--data", str(data), "--objective", "plant-fo", "--escape", "constant",
                 "--g", str(g), "--N", "10000", "--Ntest", "1000", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["objective"] == "planting-FO"
    assert {v["feature"][COUNTRY] for v in report["per_feature"]} == {"C4"}
    assert sum(v["weight"] for v in report["per_feature"]) == pytest.approx(1.0)


def test_compare_idr(tmp_path):
    data = tmp_path / "cars.csv"
    generate_base_dataset(5000, seed=0).write_csv(data)
    out = tmp_path / "idr.csv"
    assert main(["compare-idr", "--data", str(data), "--alphas", "0.1", "0.5", "0.9", "--out", str(out)]) == 0
    df = pd.read_csv(out)
    assert list(df.columns) == ["alpha", "idr_fl", "idr_fo", "prior"]
    assert (df["idr_fl"] >= df["prior"] - 1e-12).all()
    assert (df["idr_fo"] <= df["idr_fl"] + 1e-12).all()


def test_errors_exit_with_status_2(tmp_path):
    assert main(["bounds", "--data", str(tmp_path / "missing.csv")]) == 2

import json

import pandas as pd
import pytest
import tomli_w

from src.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_OK, main


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "smoke.toml"
    path.write_text(tomli_w.dumps({
        "name": "smoke",
        "checks": [{"name": "kernel_dimension", "params": {"pairs": [[3, 1]]}},
                   {"name": "synthetic_exponent", "params": {"m": 4}}],
    }), encoding="utf-8")
    return path


def test_spectral_writes_kernel_basis(tmp_path):
    assert main(["spectral", "--n", "3", "--k", "2", "--out", str(tmp_path)]) == EXIT_OK
    payload = json.loads((tmp_path / "kernel_basis.json").read_text(encoding="utf-8"))
    assert payload["dimension"] == payload["expected_dimension"] == 7
    assert payload["max_eigen_residual"] < 1e-9


def test_spectral_rejects_k_above_n(tmp_path):
    assert main(["spectral", "--n", "2", "--k", "3", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_frequency_power_curve(tmp_path):
    assert main(["frequency", "--degree", "3", "--points", "4", "--r-max", "4", "--out", str(tmp_path)]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "frequency.csv")
    assert len(frame) == 4
    assert frame["U"].to_numpy() == pytest.approx(3.0, rel=1e-8)


def test_frequency_hermite_curve(tmp_path):
    assert main(["frequency", "--hermite", "2", "--points", "3", "--r-max", "3", "--out", str(tmp_path)]) == EXIT_OK
    frame = pd.read_csv(tmp_path / "frequency.csv")
    assert set(frame["series"]) == {"hermite[2, 0]"}


def test_scenario_from_file(tmp_path, scenario_file):
    out = tmp_path / "report"
    assert main(["scenario", "--config", str(scenario_file), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["passed"]
    assert [c["name"] for c in summary["checks"]] == ["kernel_dimension", "synthetic_exponent"]


def test_scenario_default_output_root(tmp_path, scenario_file):
    assert main(["scenario", "--config", str(scenario_file)]) == EXIT_OK
    assert (tmp_path / "runs" / "smoke" / "summary.json").exists()


def test_scenario_threshold_failure_exit_code(tmp_path):
    path = tmp_path / "strict.toml"
    path.write_text(tomli_w.dumps({
        "name": "strict",
        "checks": [{"name": "dichotomy", "params": {"du0": 0.0, "expect": "exponential"}}],
    }), encoding="utf-8")
    assert main(["scenario", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_FAILED


def test_configuration_errors(tmp_path):
    assert main(["scenario", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    assert main(["scenario"]) == EXIT_CONFIG
    assert main(["scenario", "--bundled", "no_such_scenario"]) == EXIT_CONFIG


def test_geometry_commands_need_geometry(scenario_file):
    assert main(["arrival", "--config", str(scenario_file)]) == EXIT_CONFIG


def test_plots_command(tmp_path, capsys):
    assert main(["frequency", "--points", "3", "--out", str(tmp_path)]) == EXIT_OK
    # a frequency run has no summary.json
    assert main(["plots", str(tmp_path)]) == 3
    path = tmp_path / "scenario.toml"
    path.write_text(tomli_w.dumps({
        "name": "freq",
        "checks": [{"name": "frequency_power", "params": {"degrees": [2], "radii": [1.0, 2.0]}}],
    }), encoding="utf-8")
    report = tmp_path / "freq"
    assert main(["scenario", "--config", str(path), "--out", str(report)]) == EXIT_OK
    assert main(["plots", str(report)]) == EXIT_OK
    assert "U_vs_r.csv" in capsys.readouterr().out

import json
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from types import SimpleNamespace

import pytest

from src.models.schema import CheckSpec
from src.services.mcf_engine import RescaledFlowTrace
from src.services.scenario_runner import (
    CHECKS, bundled_path, dump_config, emit_plots, list_bundled, load_config, run_batch, run_scenario,
)
from src.utils.errors import ArtifactError, ConfigError


def spectral_config(name="spectral_smoke", expect="exponential", **extra):
    return {
        "name": name,
        "seed": 3,
        "checks": [
            {"name": "kernel_dimension", "params": {"pairs": [[2, 1]]}},
            {"name": "frequency_power", "params": {"degrees": [1, 2], "radii": [1.0, 2.0]}},
            {"name": "dichotomy", "params": {"lam": 0.0, "u0": 1.0, "du0": 1.0, "expect": expect}},
            {"name": "synthetic_exponent", "mode": "measured"},
        ],
        **extra,
    }


@pytest.mark.parametrize("data,key", [
    ({"name": "x", "checks": [{"name": "no_such_check"}]}, "checks[0].name"),
    ({"name": "x", "checks": [{"name": "arrival_oracle"}]}, "geometry"),
    ({"name": "x", "geometry": {"shape": "torus"}, "checks": [{"name": "pde_residual"}]}, "geometry.shape"),
    ({"name": "x", "checks": [{"name": "dichotomy", "bogus": 1}]}, "checks.0.bogus"),
    ({"name": "x"}, "checks"),
])
def test_config_errors_name_the_key(data, key):
    with pytest.raises(ConfigError) as info:
        load_config(data)
    assert info.value.key == key


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("name = [", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(broken)


def test_dump_config_round_trips():
    config = load_config(spectral_config())
    assert load_config(tomllib.loads(dump_config(config))) == config


def test_bundled_scenarios_are_valid():
    names = list_bundled()
    assert {"sphere_n2", "circle_n1", "ellipse_n1", "dumbbell_neck", "shrinker_cylinder",
            "perturbed_cylinder", "spectral_suite", "frequency_suite"} <= set(names)
    for name in names:
        config = load_config(bundled_path(name))
        assert all(check.name in CHECKS for check in config.checks)
    with pytest.raises(ConfigError):
        bundled_path("nope")


def test_run_scenario_writes_deterministic_summary(tmp_path):
    first = run_scenario(spectral_config(), tmp_path / "a")
    second = run_scenario(spectral_config(), tmp_path / "b")
    assert first.passed and first.exit_code == 0
    assert [c.verdict for c in first.checks] == ["pass", "pass", "pass", "measured"]
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    for name in ("config.toml", "run_meta.json", "frequency.csv", "dichotomy.csv"):
        assert (tmp_path / "a" / name).exists()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text(encoding="utf-8"))
    assert summary["seed"] == 3
    assert second.checks[1].value < 1e-6


def test_seed_override_and_failing_check(tmp_path):
    report = run_scenario(spectral_config(expect="polynomial"), tmp_path, seed=11)
    assert report.seed == 11
    assert not report.passed
    assert report.exit_code == 1


def test_check_errors_are_reported(tmp_path):
    config = {"name": "broken", "checks": [{"name": "dichotomy", "params": {"r0": 2.0, "r_max": 1.0}}]}
    report = run_scenario(config, tmp_path)
    assert report.checks[0].verdict == "error"
    assert report.checks[0].error.startswith("ValueError")
    assert report.exit_code == 3


def test_tolerance_scale_loosens_thresholds(tmp_path):
    config = {"name": "scaled", "checks": [{"name": "synthetic_exponent", "threshold": 1e-3}]}
    report = run_scenario(config, tmp_path, tolerance_scale=10.0)
    assert report.checks[0].threshold == pytest.approx(1e-2)


def test_emit_plots(tmp_path):
    run_scenario(spectral_config(), tmp_path)
    written = emit_plots(tmp_path)
    assert sorted(p.name for p in written) == ["U_vs_r.csv", "dichotomy_U_vs_r.csv"]
    assert all(p.parent == tmp_path / "plots" for p in written)


def test_emit_plots_needs_artifacts(tmp_path):
    with pytest.raises(ArtifactError):
        emit_plots(tmp_path)
    (tmp_path / "summary.json").write_text("{}", encoding="utf-8")
    with pytest.raises(ArtifactError):
        emit_plots(tmp_path)


def test_batch_runs_in_name_order(tmp_path):
    reports = run_batch([spectral_config("b_run"), spectral_config("a_run")], tmp_path)
    assert [r.scenario for r in reports] == ["a_run", "b_run"]
    batch = json.loads((tmp_path / "batch_summary.json").read_text(encoding="utf-8"))
    assert [s["scenario"] for s in batch["scenarios"]] == ["a_run", "b_run"]


def test_batch_rejects_duplicate_names(tmp_path):
    with pytest.raises(ConfigError):
        run_batch([spectral_config(), spectral_config()], tmp_path)


def _trace(deltas=(), axis_values=()):
    trace = RescaledFlowTrace(n=2, k=1, anchor="direct")
    trace.deltas = list(deltas)
    trace.axis_values = list(axis_values)
    return SimpleNamespace(rescaled=trace)


def _value(check, ctx, **params):
    value, _ = CHECKS[check].func(ctx, CheckSpec(name=check, params=params))
    return value


def test_axis_sum_judges_the_tail_of_the_partial_sums():
    decaying = _trace(axis_values=[1e-3 * 0.3 ** j for j in range(6)])
    assert _value("axis_sum", decaying, mode="cauchy") == pytest.approx(0.3 ** 5 * 0.7 / (1 - 0.3 ** 6))
    # a large but decaying sum still converges
    assert _value("axis_sum", _trace(axis_values=[10.0 * 0.3 ** j for j in range(6)]), mode="cauchy") < 0.01
    assert math.isinf(_value("axis_sum", _trace(axis_values=[1e-3 * 1.5 ** j for j in range(6)]), mode="cauchy"))
    assert _value("axis_sum", _trace(axis_values=[0.0, 0.0]), mode="round") == 0.0
    assert _value("axis_sum", _trace(axis_values=[0.0, 2e-12]), mode="round") == pytest.approx(2e-12)


def test_delta_decay_needs_geometric_decay():
    nan = float("nan")
    decaying = _trace(deltas=[nan] + [1e-3 * 0.4 ** j for j in range(5)] + [nan, nan])
    tail = (1e-3 * 0.4 ** 4) ** 0.9
    assert _value("delta_decay", decaying) == pytest.approx(tail)
    assert _value("delta_decay", decaying, relative=True) < 0.1
    assert math.isinf(_value("delta_decay", _trace(deltas=[nan, 1e-3, 2e-3, 4e-3, nan, nan])))
    assert _value("delta_decay", _trace(deltas=[nan, 0.0, 0.0, 0.0, nan, nan])) == 0.0


def test_displacement_check_counts_violations():
    ctx = _trace()
    ctx.rescaled.displacement_violations = 2
    assert _value("rescaled_displacement", ctx) == 2.0
    assert CHECKS["rescaled_displacement"].default_threshold == 0.0


def test_dumbbell_scenario_has_pass_fail_checks():
    config = load_config(bundled_path("dumbbell_neck"))
    judged = {c.name: c for c in config.checks if c.mode == "pass"}
    assert {"hessian_structure", "lojasiewicz_ratio", "flowline_axis_projection"} <= set(judged)
    assert judged["hessian_structure"].params["k"] == 1
    assert judged["lojasiewicz_ratio"].threshold == pytest.approx(5e-2)


@pytest.mark.parametrize("name", ["circle_n1", "sphere_n2"])
def test_round_scenarios_use_acceptance_resolution(name):
    config = load_config(bundled_path(name))
    assert config.tolerances.grid_spacing == pytest.approx(1.0 / 128.0)
    assert config.tolerances.t_end == pytest.approx(20.0)
    thresholds = {c.name: c.threshold for c in config.checks}
    assert thresholds["rescaled_radius"] == pytest.approx(1e-3)
    assert thresholds["lojasiewicz_ratio"] == pytest.approx(1e-2)
    assert thresholds["flowline_asymptotics"] == pytest.approx(0.02)


@pytest.mark.slow
def test_dumbbell_scenario_passes(tmp_path):
    report = run_scenario(bundled_path("dumbbell_neck"), tmp_path)
    verdicts = {c.name: c.verdict for c in report.checks}
    assert verdicts["hessian_structure"] == "pass"
    assert verdicts["lojasiewicz_ratio"] == "pass"
    assert verdicts["flowline_axis_projection"] == "pass"
    assert report.passed

import math

import numpy as np
import pytest

from src.utils.errors import ArtifactError, ConfigError, GeometryError, IllConditionedFitError, LabError
from src.utils.fitting import fit_power_law, geometric_rate
from src.utils.io import (
    decode_mask, encode_mask, read_json, read_surface_csv, read_table, to_jsonable, write_json, write_table,
)
from src.utils.polynomial import Polynomial, multi_indices
from src.utils.quadrature import ball_rule, gauss_hermite_rule, sphere_area, sphere_rule


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_sphere_rule_weights_sum_to_area(n):
    _, weights = sphere_rule(n, 8)
    assert weights.sum() == pytest.approx(sphere_area(n), rel=1e-12)


def test_sphere_rule_integrates_quadratics():
    nodes, weights = sphere_rule(3, 8)
    assert np.allclose(np.linalg.norm(nodes, axis=1), 1.0)
    assert np.sum(weights * nodes[:, 0] ** 2) == pytest.approx(4.0 * math.pi / 3.0, rel=1e-12)
    assert np.sum(weights * nodes[:, 0] * nodes[:, 1]) == pytest.approx(0.0, abs=1e-12)


def test_ball_rule_volume():
    _, weights = ball_rule(3, 2.0)
    assert weights.sum() == pytest.approx(4.0 / 3.0 * math.pi * 8.0, rel=1e-10)


def test_gauss_hermite_rule_carries_gaussian_weight():
    nodes, weights = gauss_hermite_rule(1)
    assert weights.sum() == pytest.approx(2.0 * math.sqrt(math.pi), rel=1e-12)
    assert np.sum(weights * nodes[:, 0] ** 2) == pytest.approx(4.0 * math.sqrt(math.pi), rel=1e-10)
    nodes0, weights0 = gauss_hermite_rule(0)
    assert nodes0.shape == (1, 0) and weights0.tolist() == [1.0]


def test_polynomial_arithmetic_and_derivatives():
    x = Polynomial.coordinate(2, 0)
    y = Polynomial.coordinate(2, 1)
    p = (x + 1.0) * (x - 1.0) + 3.0 * x * y
    pts = np.array([[2.0, 1.0], [0.5, -1.0]])
    assert np.allclose(p.value(pts), pts[:, 0] ** 2 - 1.0 + 3.0 * pts[:, 0] * pts[:, 1])
    assert np.allclose(p.gradient(pts), np.column_stack([2 * pts[:, 0] + 3 * pts[:, 1], 3 * pts[:, 0]]))
    assert np.allclose(p.hessian(pts)[0], [[2.0, 3.0], [3.0, 0.0]])
    assert p.degree == 2
    assert (p - p).is_zero()


def test_hermite_tensor_normalization():
    h2 = Polynomial.hermite_tensor([2])
    assert h2.value(np.array([[2.0]]))[0] == pytest.approx(1.0)
    assert h2.value(np.array([[0.0]]))[0] == pytest.approx(-1.0)
    mixed = Polynomial.hermite_tensor([1, 1])
    assert mixed.value(np.array([[2.0, 3.0]]))[0] == pytest.approx(3.0)


def test_multi_indices_total_degree():
    indices = list(multi_indices(3, 2))
    assert len(indices) == 6
    assert all(sum(e) == 2 for e in indices)


def test_fit_power_law_recovers_exponent():
    x = np.logspace(-3, 0, 20)
    fit = fit_power_law(x, 3.0 * x ** 2)
    assert fit.exponent == pytest.approx(2.0, abs=1e-10)
    assert fit.constant == pytest.approx(3.0, rel=1e-8)
    assert fit.r_squared == pytest.approx(1.0)


def test_fit_power_law_rejects_thin_data():
    with pytest.raises(IllConditionedFitError):
        fit_power_law([1.0, 2.0], [1.0, 4.0])
    with pytest.raises(IllConditionedFitError):
        fit_power_law(np.linspace(1.0, 2.0, 10), np.linspace(1.0, 2.0, 10), min_decades=1.0)


def test_geometric_rate():
    assert geometric_rate(0.5 ** np.arange(8)) == pytest.approx(0.5)
    assert geometric_rate(np.array([1.0, 0.0, 0.0])) is None


def test_mask_run_lengths():
    mask = np.array([[True, True, False], [False, True, True]])
    runs = encode_mask(mask)
    assert runs[0] == 0
    assert np.array_equal(decode_mask(runs, mask.shape), mask)
    with pytest.raises(ArtifactError):
        decode_mask(runs, (3, 3))


def test_tables_and_json(tmp_path):
    write_table([{"r": 1.0, "U": 2.0}, {"r": 2.0, "U": 2.0}], tmp_path / "t.csv")
    frame = read_table(tmp_path / "t.csv")
    assert list(frame.columns) == ["r", "U"]
    write_json({"b": np.float64(np.nan), "a": np.arange(2)}, tmp_path / "s.json")
    assert read_json(tmp_path / "s.json") == {"a": [0, 1], "b": None}
    assert (tmp_path / "s.json").read_text().index('"a"') < (tmp_path / "s.json").read_text().index('"b"')
    with pytest.raises(ArtifactError):
        read_table(tmp_path / "missing.csv")


def test_to_jsonable_converts_numpy():
    payload = to_jsonable({1: np.bool_(True), "x": (np.int64(3), np.inf)})
    assert payload == {"1": True, "x": [3, None]}


def test_read_surface_csv(tmp_path):
    path = tmp_path / "curve.csv"
    theta = np.linspace(0.0, 2.0 * np.pi, 64, endpoint=False)
    np.savetxt(path, np.column_stack([np.cos(theta), np.sin(theta)]), delimiter=",", header="x0,x1",
               comments="")
    surface = read_surface_csv(path)
    assert surface.kind == "plane_curve" and surface.size == 64
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    with pytest.raises(GeometryError):
        read_surface_csv(bad)


def test_error_hierarchy():
    err = ConfigError("bad key", key="checks[0].name")
    assert isinstance(err, LabError)
    assert err.key == "checks[0].name"

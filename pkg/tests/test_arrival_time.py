import numpy as np
import pytest

from src.services.arrival_time import (
    GridConfig, compute_arrival, critical_analysis, curvature_identity, exponent_fit, field_from_function,
    gradient_samples, lojasiewicz_ratio, pde_residual, synthetic_degenerate_samples,
)
from src.services.shapes import circle, graph_curve, sphere
from src.utils.errors import GeometryError, IllConditionedFitError
from src.utils.io import read_field, write_field


def _unit_disk(points):
    return np.sum(points ** 2, axis=1) <= 1.0


@pytest.fixture(scope="module")
def planar_bowl():
    """Arrival time of the shrinking unit circle, sampled exactly."""
    return field_from_function(lambda p: -0.5 * np.sum(p ** 2, axis=1), n=1, lo=(-1.0, -1.0), hi=(1.0, 1.0),
                               spacing=0.02, inside=_unit_disk)


@pytest.fixture(scope="module")
def neck_field():
    """Meridian field of the shrinking cylinder S^1 x R: u = -rho^2/2."""
    return field_from_function(lambda p: -0.5 * p[:, 1] ** 2, n=2, lo=(-1.0, -1.0), hi=(1.0, 1.0),
                               spacing=0.05, symmetry="rotational")


def test_exact_field_solves_level_set_equation(planar_bowl):
    report = pde_residual(planar_bowl)
    assert report.max_norm < 1e-10
    assert report.gradient_floor == pytest.approx(10 * 0.02)
    assert report.evaluable.sum() > 1000


def test_level_sets_move_by_mean_curvature(planar_bowl):
    report = curvature_identity(planar_bowl)
    assert report.max_relative_error < 1e-10


def test_round_critical_point(planar_bowl):
    report = critical_analysis(planar_bowl)
    best = report.points[0]
    assert np.allclose(best.position, 0.0, atol=1e-12)
    assert report.k == 0
    assert report.kernel_basis.shape == (0, 2)
    assert np.allclose(best.eigenvalues, -1.0)
    assert report.max_eigenvalue_error < 1e-8
    assert report.laplacian_error < 1e-8
    assert not report.mixed_type
    assert report.critical_value_bound_ok


def test_lsq_hessian_agrees_with_stencil(planar_bowl):
    report = critical_analysis(planar_bowl, hessian_method="lsq")
    assert report.k == 0
    assert report.laplacian_error < 1e-6


def test_unknown_hessian_method(planar_bowl):
    with pytest.raises(ValueError):
        critical_analysis(planar_bowl, hessian_method="spline")


def test_lojasiewicz_ratio_limit(planar_bowl):
    curves = lojasiewicz_ratio(planar_bowl)
    assert len(curves) == 1
    assert curves[0].limit == pytest.approx(2.0, abs=1e-8)
    assert curves[0].implied_k == pytest.approx(0.0, abs=1e-8)
    assert curves[0].two_sided_constant == pytest.approx(2.0, rel=1e-8)


def test_gradient_exponent_is_two(planar_bowl):
    fit = exponent_fit(gradient_samples(planar_bowl), min_decades=1.0)
    assert fit.exponent == pytest.approx(2.0, abs=1e-8)
    assert fit.constant == pytest.approx(0.5, rel=1e-6)


def test_neck_has_one_kernel_direction(neck_field):
    report = critical_analysis(neck_field, strict=False)
    assert report.k == 1
    assert abs(report.kernel_basis[0, 0]) == pytest.approx(1.0, abs=1e-10)
    assert report.target_eigenvalue == pytest.approx(-1.0)
    assert report.target_laplacian == pytest.approx(-2.0)
    assert report.max_eigenvalue_error < 1e-8
    assert report.laplacian_error < 1e-8


def test_neck_ratio_limit_implies_k_one(neck_field):
    curves = lojasiewicz_ratio(neck_field, critical=critical_analysis(neck_field, strict=False))
    assert curves[0].limit == pytest.approx(2.0, abs=1e-8)
    assert curves[0].implied_k == pytest.approx(1.0, abs=1e-8)


@pytest.mark.slow
def test_circle_arrival_matches_closed_form():
    field = compute_arrival(circle(1.0, 256), GridConfig(spacing=1.0 / 16.0))
    assert field.symmetry == "none"
    assert field.values[field.mask].max() == 0.0
    coords = field.coordinates
    dist2 = np.sum(coords ** 2, axis=-1)
    inner = field.mask & (dist2 <= 0.64)
    exact = -dist2[inner] / 2.0
    assert np.max(np.abs(field.values[inner] - exact)) / np.max(np.abs(exact)) < 0.05


def _inner_error(field, inner_fraction=0.8):
    dist2 = np.sum(field.coordinates ** 2, axis=-1)
    inner = field.mask & (dist2 <= inner_fraction ** 2)
    exact = -dist2[inner] / (2.0 * field.n)
    return np.max(np.abs(field.values[inner] - exact)) / np.max(np.abs(exact))


@pytest.mark.slow
def test_sphere_arrival_converges_under_refinement():
    surface = sphere(2, 1.0, 257)
    coarse = compute_arrival(surface, GridConfig(spacing=1.0 / 16.0))
    fine = compute_arrival(surface, GridConfig(spacing=1.0 / 32.0))
    assert fine.symmetry == "rotational"
    assert fine.n == 2
    assert _inner_error(fine) < 0.05
    assert _inner_error(coarse) / _inner_error(fine) >= 3.0


def test_arrival_needs_mean_convex_input():
    with pytest.raises(GeometryError):
        compute_arrival(graph_curve(lambda t: 0.3 * np.cos(5 * t), count=256))


def test_field_round_trip(tmp_path, planar_bowl):
    write_field(planar_bowl, tmp_path / "bowl")
    loaded = read_field(tmp_path / "bowl")
    assert np.array_equal(loaded.mask, planar_bowl.mask)
    assert np.array_equal(loaded.values[loaded.mask], planar_bowl.values[planar_bowl.mask])
    assert loaded.spacing == planar_bowl.spacing
    assert loaded.symmetry == "none"


@pytest.mark.parametrize("m", [2, 3, 5])
def test_synthetic_exponent(m):
    fit = exponent_fit(synthetic_degenerate_samples(m))
    assert fit.exponent == pytest.approx(m / (m - 1.0), rel=1e-8)


def test_synthetic_samples_need_m_at_least_two():
    with pytest.raises(ValueError):
        synthetic_degenerate_samples(1)


def test_distance_exponent_from_lower_envelope():
    dist = np.logspace(-3.0, 0.0, 100)
    fit = exponent_fit(np.column_stack([dist, dist ** 2]), mode="distance")
    assert fit.exponent == pytest.approx(2.0, rel=1e-6)


def test_exponent_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        exponent_fit(synthetic_degenerate_samples(3), mode="bogus")
    with pytest.raises(IllConditionedFitError):
        exponent_fit(np.zeros((10, 3)))

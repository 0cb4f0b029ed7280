import math

import numpy as np
import pytest

from src.services import drift_spectral as ds
from src.services.geometry_core import ShrinkerCylinder
from src.utils.errors import DegenerateError, DomainError
from src.utils.polynomial import Polynomial


@pytest.fixture
def points(rng):
    return rng.normal(scale=2.0, size=(40, 2))


@pytest.mark.parametrize("two_lambda", [0, 1, 2, 3, 4])
def test_hermite_basis_are_eigenfunctions(two_lambda, points):
    basis = ds.hermite_eigen(2, two_lambda)
    assert len(basis) == two_lambda + 1
    for v in basis:
        scale = max(1.0, float(np.max(np.abs(v.value(points)))))
        assert ds.eigen_residual(v, two_lambda / 2.0, points) < 1e-9 * scale


def test_hermite_basis_is_monic():
    values = sorted(float(v.value(np.array([[3.0, 0.0]]))[0]) for v in ds.hermite_eigen(2, 2))
    # x1^2 - 2, x1 x2, x2^2 - 2 at (3, 0)
    assert values == pytest.approx([-2.0, 0.0, 7.0])


def test_hermite_basis_is_gaussian_orthogonal():
    basis = ds.hermite_eigen(2, 2) + ds.hermite_eigen(2, 1)
    gram = np.array([[ds.gaussian_inner(p, q, 2) for q in basis] for p in basis])
    off = gram - np.diag(np.diag(gram))
    assert np.max(np.abs(off)) < 1e-9 * np.max(np.diag(gram))
    assert np.all(np.diag(gram) > 0)


def test_drift_laplacian_of_radial_power(points):
    u = ds.RadialFunction.power(2.0, 2)
    r2 = np.sum(points ** 2, axis=1)
    assert np.allclose(ds.drift_apply(u, points), 4.0 - r2)


def test_rayleigh_quotient_of_eigenfunction():
    v = Polynomial.hermite_tensor([2, 1], nvars=2)
    report = ds.rayleigh_check(v, 2, 1.5)
    assert report["energy"] == pytest.approx(1.5 * report["mass"], rel=1e-10)
    assert report["satisfied"]


@pytest.mark.parametrize("n,k", [(1, 0), (2, 1), (3, 1), (3, 2), (4, 2)])
def test_kernel_basis_dimension_and_residuals(n, k):
    basis = ds.kernel_basis(n, k)
    assert len(basis) == ds.kernel_dimension(n, k)
    cyl = ShrinkerCylinder.standard(n, k)
    pts = ds.cylinder_points(cyl, 60, seed=1)
    assert np.allclose(cyl.radial_distance(pts), cyl.radius)
    for element in basis:
        assert ds.eigen_residual(element.function(cyl), 1.0, pts) < 1e-9


def test_kernel_basis_rejects_bad_k():
    with pytest.raises(ValueError):
        ds.kernel_basis(2, 2)


def test_kernel_element_coefficients_round_trip():
    element = ds.KernelElement.from_coefficients(3, 2, np.arange(1.0, 8.0))
    assert np.array_equal(element.coefficients(), np.arange(1.0, 8.0))
    assert element.as_dict()["coefficients"]["y1*y2"] == 3.0


def test_projection_recovers_kernel_element():
    cyl = ShrinkerCylinder.standard(2, 1)
    element = ds.KernelElement.from_coefficients(2, 1, [0.3, -0.2, 0.1])
    projection = ds.kernel_project(element.polynomial, cyl)
    assert np.allclose(projection.element.coefficients(), [0.3, -0.2, 0.1], atol=1e-10)
    assert projection.remainder_sup < 1e-9
    assert projection.sup_radius == 6.0


def test_projection_is_idempotent():
    cyl = ShrinkerCylinder.standard(2, 1)
    quartic = Polynomial.hermite_tensor([4], nvars=3)
    first = ds.kernel_project(quartic + Polynomial.coordinate(3, 0) * Polynomial.coordinate(3, 1), cyl)
    second = ds.kernel_project(first.element.polynomial, cyl)
    assert np.allclose(first.element.coefficients(), second.element.coefficients(), atol=1e-10)
    assert np.allclose(first.element.coefficients(), [0.0, 1.0, 0.0], atol=1e-10)


def test_projection_needs_an_axis():
    with pytest.raises(DomainError):
        ds.kernel_project(Polynomial.constant(3, 1.0), ShrinkerCylinder.standard(2, 0))


def test_projection_needs_a_large_enough_domain():
    def w(local):
        return np.zeros(len(local))

    w.domain_radius = 2.0
    with pytest.raises(DomainError):
        ds.kernel_project(w, ShrinkerCylinder.standard(2, 1))


def test_projection_sweep_is_linear_in_delta():
    sweep = ds.projection_sweep(2, 1, [1e-3, 1e-2, 1e-1])
    assert sweep["nu"] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("n,k", [(2, 1), (3, 1), (1, 0)])
def test_cylinder_mean_curvature(n, k):
    linear = ds.graph_H_linearize(0.0, ShrinkerCylinder.standard(n, k))
    assert linear.remainder_sup < 1e-8
    assert linear.phi_mismatch_sup < 1e-8
    assert np.mean(linear.exact) == pytest.approx(math.sqrt((n - k) / 2.0), rel=1e-8)


def test_linearization_remainder_is_quadratic():
    sweep = ds.linearization_sweep(2, 1, [2e-3, 4e-3, 8e-3])
    assert sweep["slope"] == pytest.approx(2.0, abs=0.2)


@pytest.mark.parametrize("d", [1.0, 2.0, 3.5])
def test_frequency_of_homogeneous_power(d):
    prob = ds.FrequencyProblem(n=2, u=ds.RadialFunction.power(d, 2), r_max=8.0)
    curve = ds.frequency_curve(prob, [1.0, 2.0, 4.0])
    assert np.allclose(curve.U, d, rtol=1e-10)
    assert np.allclose(curve.U_prime, 0.0, atol=1e-5)
    assert np.allclose(curve.log_I_residual, 0.0, atol=1e-5)
    assert list(curve.radii) == [1.0, 2.0, 4.0]


def test_bulk_and_surface_frequency_agree_for_eigenfunctions():
    v = Polynomial.hermite_tensor([2, 0], nvars=2)
    point = ds.frequency(ds.FrequencyProblem(n=2, u=v, potential=1.0), 2.0)
    assert point.discrepancy < 1e-8


def test_frequency_domain_and_degeneracy():
    prob = ds.FrequencyProblem(n=2, u=Polynomial(2), r_max=5.0)
    with pytest.raises(DomainError):
        ds.frequency(prob, 6.0)
    with pytest.raises(DegenerateError):
        ds.frequency(prob, 1.0)


@pytest.mark.parametrize("lam,u0,du0,r0,r_max,verdict", [
    (0.0, 1.0, 1.0, 1.0, 20.0, "exponential"),
    (0.0, 1.0, 0.0, 1.0, 20.0, "polynomial"),
    (1.0, 5.0, 6.0, 3.0, 10.0, "polynomial"),
])
def test_dichotomy_verdicts(lam, u0, du0, r0, r_max, verdict):
    result = ds.dichotomy_probe(lam, u0, du0, r0=r0, r_max=r_max)
    assert result.verdict == verdict
    assert len(result.rows()) == len(result.radii)
    if verdict == "exponential":
        assert result.bound_verified
        assert result.crossing_radius >= 6.0


def test_dichotomy_rejects_bad_interval():
    with pytest.raises(ValueError):
        ds.dichotomy_probe(0.0, 1.0, 1.0, r0=2.0, r_max=1.0)

import math

import numpy as np
import pytest

from src.services.geometry_core import (
    GaussianQuadrature, ShrinkerCylinder, Surface, first_crossing, fit_cylinder, gaussian_area, mean_curvature,
    rescaled_speed, shrinker_residual, surface_from_levelset,
)
from src.services.shapes import (
    circle, cylinder_profile, ellipse, ellipse_curvature, graph_profile, random_rotation, sphere,
)
from src.utils.errors import GeometryError, GraphFailureError, StencilError


@pytest.mark.parametrize("radius", [0.5, 1.0, 3.0])
def test_circle_mean_curvature_is_exact(radius):
    surface = circle(radius, 128)
    assert np.allclose(surface.mean_curvatures, 1.0 / radius, rtol=1e-12)
    assert mean_curvature(surface, 5) == pytest.approx(1.0 / radius)


@pytest.mark.parametrize("n", [2, 3])
def test_sphere_profile_mean_curvature(n):
    surface = sphere(n, 1.5, 257)
    assert np.allclose(surface.mean_curvatures, n / 1.5, rtol=1e-10)


def test_ellipse_curvature_matches_closed_form():
    surface = ellipse(2.0, 1.0, 512)
    theta = np.arctan2(surface.samples[:, 1] / 1.0, surface.samples[:, 0] / 2.0)
    assert np.allclose(surface.mean_curvatures, ellipse_curvature(2.0, 1.0, theta), rtol=1e-2)


def test_curvature_stencil_is_second_order():
    errors = []
    for count in (64, 128, 256):
        surface = ellipse(2.0, 1.0, count)
        theta = np.arctan2(surface.samples[:, 1] / 1.0, surface.samples[:, 0] / 2.0)
        exact = ellipse_curvature(2.0, 1.0, theta)
        errors.append(np.max(np.abs(surface.mean_curvatures - exact) / exact))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 1.9)


@pytest.mark.parametrize("surface", [circle(math.sqrt(2.0), 256), sphere(2, 2.0, 257), cylinder_profile(2)],
                         ids=["circle", "sphere", "cylinder"])
def test_shrinkers_have_zero_residual(surface):
    assert shrinker_residual(surface).max_norm < 1e-10
    assert np.all(np.abs(rescaled_speed(surface)) < 1e-10)


def test_shrinker_residual_sign_off_shrinker():
    residual = shrinker_residual(circle(1.0, 128))
    assert np.allclose(residual.values, 1.0 - 0.5)


def test_gaussian_area_of_circle():
    radius = 1.3
    report = gaussian_area(circle(radius, 256))
    assert report.value == pytest.approx(2.0 * math.pi * radius * math.exp(-radius ** 2 / 4.0), rel=1e-6)
    assert not report.tail_warning


def test_gaussian_area_of_sphere():
    report = gaussian_area(sphere(2, 2.0, 513))
    assert report.value == pytest.approx(16.0 * math.pi * math.exp(-1.0), rel=1e-4)


def test_gaussian_area_of_shrinking_cylinder():
    report = gaussian_area(cylinder_profile(2))
    expected = 2.0 * math.pi * math.sqrt(2.0) * math.exp(-0.5) * 2.0 * math.sqrt(math.pi)
    assert report.value == pytest.approx(expected, rel=1e-6)


def test_gaussian_area_is_rotation_invariant():
    surface = circle(1.0, 256, center=(0.3, -0.2))
    rotated = surface.rotated(random_rotation(2, seed=4))
    assert gaussian_area(rotated).value == pytest.approx(gaussian_area(surface).value, rel=1e-12)


def test_truncation_reports_tail():
    quad = GaussianQuadrature(truncation_radius=1.0)
    report = gaussian_area(circle(1.5, 128), quad)
    assert report.value == 0.0
    assert report.outside_measure == pytest.approx(2.0 * math.pi * 1.5, rel=1e-6)
    assert report.tail_warning


def test_invalid_curves_are_rejected():
    clockwise = circle(1.0, 64).samples[::-1]
    with pytest.raises(GeometryError):
        Surface(kind="plane_curve", ambient_dimension=2, samples=clockwise)
    with pytest.raises(GeometryError):
        Surface(kind="plane_curve", ambient_dimension=2, samples=circle(1.0, 8).samples)
    with pytest.raises(GeometryError):
        Surface(kind="torus", ambient_dimension=2, samples=circle(1.0, 64).samples)


def test_self_intersecting_curve_is_rejected():
    # limacon r = 1/2 + cos(theta): positive curvature, counter-clockwise, with an inner loop
    theta = 2.0 * np.pi * np.arange(64) / 64
    r = 0.5 + np.cos(theta)
    samples = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    with pytest.raises(GeometryError, match="not simple"):
        Surface(kind="plane_curve", ambient_dimension=2, samples=samples)
    assert first_crossing(samples) is not None
    assert first_crossing(ellipse(3.0, 1.0, 64).samples) is None


def test_non_star_shaped_simple_curve_is_accepted():
    # crescent: outer arc counter-clockwise, inner arc back
    outer = np.linspace(-5.0 * np.pi / 6.0, 5.0 * np.pi / 6.0, 100)
    inner = outer[::-1][::2]
    samples = np.vstack([np.column_stack([np.cos(outer), np.sin(outer)]),
                         0.6 * np.column_stack([np.cos(inner), np.sin(inner)])])
    assert first_crossing(samples) is None
    surface = Surface(kind="plane_curve", ambient_dimension=2, samples=samples)
    assert surface.signed_area > 0.0


def test_coincident_samples_raise_stencil_error():
    samples = circle(1.0, 64).samples
    samples = np.insert(samples, 10, samples[10], axis=0)
    surface = Surface(kind="plane_curve", ambient_dimension=2, samples=samples)
    with pytest.raises(StencilError):
        surface.mean_curvatures
    with pytest.raises(StencilError):
        mean_curvature(circle(1.0, 64), 64)


def test_cylinder_frame_validation():
    cyl = ShrinkerCylinder.standard(3, 1)
    assert cyl.radius == pytest.approx(2.0)
    assert cyl.mean_curvature == pytest.approx(1.0)
    assert np.allclose(cyl.axis_projection + cyl.orthogonal_projection, np.eye(4))
    local = np.array([[0.5, 2.0, 0.0, 0.0]])
    assert np.allclose(cyl.local_coordinates(cyl.from_local(local)), local)
    with pytest.raises(GeometryError):
        ShrinkerCylinder.standard(2, 2)
    with pytest.raises(GeometryError):
        ShrinkerCylinder(n=2, k=1, center=np.zeros(3), axis_frame=[2.0, 0.0, 0.0])


def test_fit_recovers_exact_cylinder():
    fit = fit_cylinder(cylinder_profile(2), 1)
    assert fit.measured_radius == pytest.approx(math.sqrt(2.0), abs=1e-6)
    assert fit.norms["L2"] < 1e-6
    assert abs(abs(fit.cylinder.axis_frame[0, 0]) - 1.0) < 1e-6


def test_fit_recovers_shrinking_sphere():
    fit = fit_cylinder(sphere(2, 2.0, 257), 0)
    assert fit.measured_radius == pytest.approx(2.0, abs=1e-6)
    assert np.linalg.norm(fit.cylinder.center) < 1e-6


def test_sphere_is_not_graphical_over_a_cylinder():
    with pytest.raises(GraphFailureError) as info:
        fit_cylinder(sphere(2, 2.0, 257), 1)
    assert info.value.sample_index >= 0


def test_surface_from_levelset_finds_circle():
    h = 0.05
    axis = np.arange(-1.5, 1.5 + h / 2, h)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    surface = surface_from_levelset(xx ** 2 + yy ** 2, h, (axis[0], axis[0]), level=1.0)
    assert np.allclose(np.linalg.norm(surface.samples, axis=1), 1.0, atol=h ** 2)
    with pytest.raises(GeometryError):
        surface_from_levelset(xx ** 2 + yy ** 2, h, (axis[0], axis[0]), level=10.0)


def _bump(x):
    return 0.05 * np.exp(-x ** 2 / 4.0)


def test_fit_recovers_manufactured_graph():
    fit = fit_cylinder(graph_profile(2, _bump), 1)
    assert np.linalg.norm(fit.cylinder.center) < 1e-6
    assert abs(abs(fit.cylinder.axis_frame[0, 0]) - 1.0) < 1e-8
    ball = np.linalg.norm(fit.cloud.points, axis=1) <= 4.0
    assert np.allclose(fit.w[ball], _bump(fit.cloud.points[ball, 0]), atol=1e-5)


def test_fit_is_rotation_equivariant():
    rotation = random_rotation(3, seed=4)
    surface = graph_profile(2, _bump)
    fit = fit_cylinder(surface, 1)
    turned = fit_cylinder(surface.rotated(rotation), 1)
    axis = turned.cylinder.axis_frame[:, 0]
    assert abs(axis @ (rotation @ fit.cylinder.axis_frame[:, 0])) == pytest.approx(1.0, abs=1e-8)
    assert np.allclose(turned.cylinder.center, rotation @ fit.cylinder.center, atol=1e-6)
    assert turned.measured_radius == pytest.approx(fit.measured_radius, abs=1e-8)
    assert np.allclose(turned.w, fit.w, atol=1e-6)
    assert turned.norms["L2"] == pytest.approx(fit.norms["L2"], rel=1e-6)

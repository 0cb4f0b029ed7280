import math

import numpy as np
import pytest

from src.services.mcf_engine import (
    FlowHistory, RescaledConfig, RescaledFlowTrace, axis_grad_H, cfl_bound, check_displacements,
    estimate_extinction, phi_norm, run_mcf, run_rescaled, step_mcf, step_rescaled,
)
from src.services.shapes import circle, cylinder_profile, graph_curve, perturbed_cylinder_profile, sphere
from src.utils.errors import DependencyError, GeometryError, StepSizeError


def test_circle_step_shrinks_radius(unit_circle):
    dt = 0.5 * cfl_bound(unit_circle)
    stepped = step_mcf(unit_circle, dt)
    radii = np.linalg.norm(stepped.samples, axis=1)
    assert np.allclose(radii, 1.0 - dt, atol=1e-12)
    assert stepped.time == pytest.approx(dt)


def test_rescaled_step_keeps_shrinking_circle_fixed():
    surface = circle(math.sqrt(2.0), 128)
    stepped = step_rescaled(surface, 0.5 * cfl_bound(surface))
    assert np.allclose(stepped.samples, surface.samples, atol=1e-12)


def test_rescaled_step_keeps_shrinking_cylinder_fixed():
    surface = cylinder_profile(2)
    stepped = step_rescaled(surface, 0.5 * cfl_bound(surface))
    assert np.allclose(stepped.samples, surface.samples, atol=1e-12)


def test_sphere_step_follows_radius_ode():
    surface = sphere(2, 1.0, 257)
    errors = []
    for dt in (0.5 * cfl_bound(surface), 0.25 * cfl_bound(surface)):
        radii = np.linalg.norm(step_mcf(surface, dt).samples, axis=1)
        # R(tau) = sqrt(R^2 - 4 tau) on S^2
        errors.append(np.max(np.abs(radii - math.sqrt(1.0 - 4.0 * dt))))
        assert errors[-1] < 10.0 * dt ** 2
    assert errors[0] / errors[1] >= 3.5


@pytest.mark.parametrize("factor", [0.8, 1.2])
def test_rescaled_step_on_off_radius_sphere(factor):
    n = 2
    radius = factor * math.sqrt(2.0 * n)
    surface = sphere(n, radius, 257)
    dt = 0.5 * cfl_bound(surface)
    radii = np.linalg.norm(step_rescaled(surface, dt).samples, axis=1)
    # R' = R/2 - n/R: spheres drift away from the shrinker radius in rescaled time
    assert np.allclose(radii, radius + dt * (radius / 2.0 - n / radius), atol=1e-10)
    assert np.sign(radii.mean() - radius) == np.sign(factor - 1.0)


def test_step_above_cfl_bound_is_rejected(unit_circle):
    bound = cfl_bound(unit_circle)
    with pytest.raises(StepSizeError):
        step_mcf(unit_circle, 10.0 * bound)
    with pytest.raises(StepSizeError):
        step_mcf(unit_circle, 0.0)


@pytest.fixture(scope="module")
def shrinking_circle():
    return run_mcf(circle(0.5, 64), stop_curvature=10.0)


def test_run_mcf_stops_at_curvature_limit(shrinking_circle):
    assert shrinking_circle.reason == "curvature_limit"
    assert shrinking_circle.max_curvature[-1] > 10.0
    assert np.all(np.diff(shrinking_circle.times) > 0)
    # radius^2 = 1/4 - 2 tau for the circle
    last = shrinking_circle.surfaces[-1]
    radius = np.mean(np.linalg.norm(last.samples, axis=1))
    assert radius ** 2 == pytest.approx(0.25 - 2.0 * last.time, abs=1e-3)


def test_extinction_estimate_for_circle(shrinking_circle):
    estimate = estimate_extinction(shrinking_circle)
    assert estimate.time == pytest.approx(0.125, rel=5e-3)
    assert estimate.n_minus_k == pytest.approx(1.0, rel=1e-2)
    assert np.allclose(estimate.point, 0.0, atol=1e-8)
    assert set(estimate.as_dict()) == {"time", "point", "slope", "n_minus_k"}


def test_extinction_needs_three_snapshots(unit_circle):
    with pytest.raises(DependencyError):
        estimate_extinction(FlowHistory(surfaces=[unit_circle, unit_circle]))


def test_axis_term_without_fits_is_a_dependency_error():
    with pytest.raises(DependencyError):
        axis_grad_H(RescaledFlowTrace(n=1, k=0, anchor="direct"), 0)


def test_phi_norm_vanishes_on_shrinkers():
    assert phi_norm(circle(math.sqrt(2.0), 256)) < 1e-10
    assert phi_norm(cylinder_profile(2)) < 1e-10
    assert phi_norm(circle(1.0, 256)) > 0.1


def test_run_rescaled_needs_mean_convex_input():
    wobbly = graph_curve(lambda t: 0.3 * np.cos(5 * t), count=256)
    with pytest.raises(GeometryError):
        run_rescaled(wobbly, 2.0)


def test_extinction_anchor_needs_closed_profile():
    with pytest.raises(GeometryError):
        run_rescaled(cylinder_profile(2), 2.0, RescaledConfig(anchor="extinction"))


@pytest.mark.slow
def test_rescaled_circle_converges_to_shrinker():
    trace = run_rescaled(circle(1.0, 64), 4.0)
    assert trace.anchor == "extinction"
    # rescaled time starts at -log T = log 4
    assert trace.j == [2, 3, 4]
    assert trace.max_area_increase < 1e-6
    last = trace.snapshots[-1]
    assert np.mean(np.linalg.norm(last.samples, axis=1)) == pytest.approx(math.sqrt(2.0), rel=1e-2)
    assert len(trace.rows()) == len(trace.j)
    assert trace.summary()["integer_times"] == len(trace.j)


@pytest.mark.slow
def test_rescaled_cylinder_is_stationary():
    trace = run_rescaled(cylinder_profile(2), 2.0, RescaledConfig(record_every=50))
    assert trace.anchor == "direct"
    assert trace.termination == "t_end"
    assert trace.monotonicity_violations == 0
    assert all(fit.measured_radius == pytest.approx(math.sqrt(2.0), rel=1e-6) for fit in trace.fits)
    assert max(trace.projection_jumps) < 1e-6


def test_displacement_above_delta_is_flagged():
    trace = RescaledFlowTrace(n=1, k=0, anchor="direct", j=[0, 1, 2, 3])
    trace.deltas = [float("nan"), 1e-2, 1e-3, float("nan")]
    trace.displacements = [5e-2, 1.05e-2, 2e-3]
    check_displacements(trace, 0.1)
    assert trace.displacement_violations == 1
    assert trace.max_displacement_ratio == pytest.approx(2.0)
    assert trace.summary()["displacement_violations"] == 1


@pytest.mark.slow
def test_perturbed_cylinder_deltas_decay_geometrically():
    trace = run_rescaled(perturbed_cylinder_profile(2), 6.0, RescaledConfig(k=1, graph_radius=4.0))
    deltas = np.array([d for d in trace.deltas if np.isfinite(d)])
    assert deltas.size >= 3
    assert np.all(np.diff(deltas) < 0.0)
    assert trace.summary()["delta_rate"] < 1.0
    assert trace.displacement_violations == 0
    assert all(a > 0.0 for a in trace.axis_values)
    assert trace.axis_values[-1] < trace.axis_values[0]

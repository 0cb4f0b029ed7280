import math

import numpy as np
import pytest

from src.services.flowline import (
    AnalyticEvaluator, TraceConfig, asymptotics, curvature_diagnostics, dyadic_diagnostics, finite_length,
    limit_estimators, linear_function, quadratic_bowl, spiral_field, trace, trace_many,
)
from src.utils.errors import BudgetError, DegenerateError, DomainExitError

X0 = (1.0, 0.5, -0.25)


@pytest.fixture(scope="module")
def bowl_line():
    return trace(quadratic_bowl(2), X0, TraceConfig(atol=1e-20))


def anisotropic_bowl():
    """u = -(x^2 + 4 y^2)/2; lines bend onto the x axis."""
    scale = np.array([1.0, 4.0])
    return AnalyticEvaluator(value=lambda p: -0.5 * (p ** 2) @ scale, gradient=lambda p: -p * scale,
                             hessian=lambda p: np.broadcast_to(-np.diag(scale), (len(p), 2, 2)).copy(),
                             dimension=2, n=1)


def test_bowl_line_runs_straight_into_the_origin(bowl_line):
    assert bowl_line.termination == "stop_tolerance"
    assert np.allclose(bowl_line.limit_point, 0.0, atol=1e-10)
    assert bowl_line.length == pytest.approx(np.linalg.norm(X0), rel=1e-6)
    assert bowl_line.monotonicity_violation == 0.0
    assert bowl_line.limit_in_critical_set
    assert np.all(np.diff(bowl_line.s) < 0)


def test_bowl_asymptotics_match_round_sphere_profile(bowl_line):
    report = asymptotics(bowl_line, k=0)
    assert report["value_deviation"] < 1e-3
    assert report["gradient_deviation"] < 1e-3
    assert report["axis_projection_tail_max"] == 0.0
    assert report["ball_containment"] == 1.0


def test_asymptotics_rejects_k_at_least_n(bowl_line):
    with pytest.raises(ValueError):
        asymptotics(bowl_line, k=2)


def test_bowl_dyadic_offsets(bowl_line):
    report = dyadic_diagnostics(bowl_line, k=0)
    assert report["offset_target"] == pytest.approx(math.log(4.0))
    assert report["offset_tail_error"] < 1e-3
    assert report["log_ratio_max"] == pytest.approx(0.5, abs=1e-3)
    assert np.all(np.diff(report["chain_partial_sums"]) >= 0)


def test_radial_line_has_no_tangent_chain(bowl_line):
    report = dyadic_diagnostics(bowl_line, k=0)
    assert len(report["chain_increments"]) >= 3
    assert report["chain_partial_sums"][-1] < 1e-9


def test_dyadic_chain_uses_per_step_projections(bowl_line):
    steps = len(dyadic_diagnostics(bowl_line, k=0)["chain_increments"])
    zero = np.zeros((steps + 1, 3, 3))
    assert dyadic_diagnostics(bowl_line, k=0, projection=zero)["chain_partial_sums"][-1] == 0.0
    with pytest.raises(ValueError):
        dyadic_diagnostics(bowl_line, k=0, projection=zero[:1])


def test_bowl_limit_is_detected(bowl_line):
    report = limit_estimators(bowl_line)
    assert report["limit_detected"]
    assert not report["no_limit_detected"]
    assert report["final_secant_oscillation"] < 1e-2
    assert report["secant_tangent_angle"] < 1e-4


def test_bowl_length_is_finite(bowl_line):
    report = finite_length(bowl_line)
    assert report["chord_length"] == pytest.approx(bowl_line.length, rel=1e-6)
    assert report["tail_ratio"] < 1e-6


def test_bowl_line_has_no_curvature(bowl_line):
    report = curvature_diagnostics(bowl_line)
    assert report["s_kappa_max"] < 1e-6
    assert report["total_curvature"] < 1e-6


def test_total_curvature_is_the_turning_angle():
    line = trace(anisotropic_bowl(), (1.0, 1.0), TraceConfig(atol=1e-20))
    report = curvature_diagnostics(line)
    # the tangent turns from (1, 4)/sqrt(17) to the x axis
    assert report["total_curvature"] == pytest.approx(math.atan(4.0), rel=1e-2)
    assert report["fd_formula_discrepancy"] < 0.05
    assert np.allclose(line.limit_point, 0.0, atol=1e-8)


def test_curvature_window_needs_lambda_above_one(bowl_line):
    with pytest.raises(ValueError):
        curvature_diagnostics(bowl_line, Lambda=1.0)


def test_spiral_has_no_limit_direction():
    line = trace(spiral_field(0.1), (1.0, 0.0), TraceConfig(stop_tol=1e-6, rtol=1e-8))
    report = limit_estimators(line)
    assert report["no_limit_detected"]
    assert report["final_secant_oscillation"] > 2.0
    assert line.monotonicity_violation < 1e-12


def test_linear_function_exhausts_the_budget():
    with pytest.raises(BudgetError):
        trace(linear_function(2), (0.0, 0.0), TraceConfig(t_max=50.0))


def test_leaving_the_domain_raises():
    outward = AnalyticEvaluator(value=lambda p: 0.5 * np.sum(p ** 2, axis=1), gradient=lambda p: p,
                                hessian=lambda p: np.broadcast_to(np.eye(2), (len(p), 2, 2)).copy(),
                                dimension=2, domain_radius=2.0)
    with pytest.raises(DomainExitError):
        trace(outward, (1.0, 0.0))
    with pytest.raises(DomainExitError):
        trace(outward, (3.0, 0.0))


def test_starting_at_a_critical_point_raises():
    with pytest.raises(DegenerateError):
        trace(quadratic_bowl(2), (0.0, 0.0, 0.0))


def test_trace_many_keeps_start_order():
    starts = [(1.0, 0.0), (0.0, 0.7), (-0.4, -0.4)]
    lines = trace_many(quadratic_bowl(1), starts, threads=2)
    assert [tuple(line.start) for line in lines] == starts
    assert all(np.allclose(line.limit_point, 0.0, atol=1e-6) for line in lines)

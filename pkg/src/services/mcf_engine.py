"""
Explicit mean curvature flow and rescaled mean curvature flow.

Closed surfaces are rescaled about their extinction point: MCF is run towards
extinction, the extinction time T and point x0 are estimated from the late
history, and each snapshot M_tau is mapped to (M_tau - x0)/sqrt(T - tau) at
rescaled time t = -log(T - tau). Non-compact profiles are evolved by the
rescaled equation itself.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid
from sklearn.linear_model import LinearRegression

from src.services.geometry_core import (
    CylinderFit,
    GaussianQuadrature,
    Surface,
    fit_cylinder,
    gaussian_area,
    rescaled_speed,
)
from src.utils.errors import (
    DependencyError,
    GeometryError,
    GraphFailureError,
    SingularityDetected,
    StepRejectedError,
    StepSizeError,
)
from src.utils.fitting import geometric_rate
from src.utils.quadrature import gaussian_weight, sphere_area, sphere_rule

logger = logging.getLogger(__name__)

CFL_FACTOR = 0.4
SINGULARITY_THRESHOLD = 0.5
MONOTONICITY_TOLERANCE = 1e-9
RADICAND_FLOOR = -1e-12
# displacement noise allowed on top of delta_j (1 + tolerance)
DISPLACEMENT_FLOOR = float(np.sqrt(MONOTONICITY_TOLERANCE))


# --------------------------------------------------------------------------------------
# single steps
# --------------------------------------------------------------------------------------

def cfl_bound(surface: Surface) -> float:
    """dt <= 0.4 min(1, 2/n) h_min^2 / (max|H| h_min + 1)."""
    h = surface.min_spacing
    h_max = float(np.max(np.abs(surface.mean_curvatures)))
    return CFL_FACTOR * min(1.0, 2.0 / surface.n) * h * h / (h_max * h + 1.0)


def _check_singularity(surface: Surface) -> None:
    geo = surface.geometry
    scaled = np.abs(geo.mean_curvature) * geo.spacing
    worst = int(np.argmax(scaled))
    if scaled[worst] > SINGULARITY_THRESHOLD:
        location = surface.embed(surface.samples[worst:worst + 1] * (1.0, 0.0)
                                 if surface.kind == "profile_of_revolution"
                                 else surface.samples[worst:worst + 1])[0]
        raise SingularityDetected(location, surface.time, float(abs(geo.mean_curvature[worst])))


def _normal_step(surface: Surface, speed: np.ndarray, dt: float) -> Surface:
    if surface.kind == "levelset_isosurface":
        raise GeometryError("level-set surfaces are not stepped explicitly")
    bound = cfl_bound(surface)
    if dt <= 0.0 or dt > bound * (1.0 + 1e-12):
        raise StepSizeError(dt, bound)
    _check_singularity(surface)
    samples = surface.samples + dt * speed[:, None] * surface.geometry.normal
    if surface.kind == "profile_of_revolution":
        if surface.ends == "capped":
            samples[0, 1] = samples[-1, 1] = 0.0
            interior = samples[1:-1, 1]
        else:
            interior = samples[:, 1]
        if np.any(interior <= 0.0):
            bad = int(np.argmin(samples[:, 1]))
            raise SingularityDetected(surface.embed(samples[bad:bad + 1] * (1.0, 0.0))[0],
                                      surface.time + dt, float(np.max(np.abs(surface.mean_curvatures))))
    try:
        return surface.with_samples(samples, time=surface.time + dt)
    except GeometryError as exc:
        if surface.mean_convex and "mean convexity" in str(exc):
            raise StepRejectedError(f"step of {dt:.3e} at time {surface.time:.6g} loses mean convexity") from exc
        raise


def step_mcf(surface: Surface, dt: float) -> Surface:
    """One explicit step of dx/dtau = -H n."""
    return _normal_step(surface, -surface.mean_curvatures, dt)


def step_rescaled(surface: Surface, dt: float) -> Surface:
    """One explicit step of dx/dt = -(H - <x, n>/2) n."""
    return _normal_step(surface, rescaled_speed(surface), dt)


def maybe_resample(surface: Surface, spacing: Optional[float] = None, ratio: float = 1.5,
                   min_count: int = 16) -> Surface:
    """Arclength resampling when spacing is uneven or drifts from the target."""
    geo = surface.geometry
    h_min, h_max = float(np.min(geo.spacing)), float(np.max(geo.spacing))
    if spacing is None:
        if h_max <= ratio * h_min:
            return surface
        return surface.resampled(count=surface.size)
    if h_max <= ratio * h_min and spacing / ratio <= h_min and h_max <= ratio * spacing:
        return surface
    count = max(int(np.ceil(surface.total_length() / spacing)), min_count)
    return surface.resampled(count=count)


# --------------------------------------------------------------------------------------
# flow histories
# --------------------------------------------------------------------------------------

@dataclass
class FlowHistory:
    """Snapshots of an MCF run in time order; `reason` says why it stopped."""

    surfaces: List[Surface] = field(default_factory=list)
    reason: str = "completed"
    singularity: Optional[SingularityDetected] = None

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.surfaces])

    @property
    def max_curvature(self) -> np.ndarray:
        return np.array([float(np.max(s.mean_curvatures)) for s in self.surfaces])


def run_mcf(surface: Surface, t_end: float = np.inf, cfl_fraction: float = 0.9,
            max_steps: int = 200_000, stop_curvature: float = np.inf,
            resample_spacing: Optional[float] = None, record_every: int = 1) -> FlowHistory:
    """
    Step MCF until t_end, until max H exceeds stop_curvature, or until a singularity.

    Singularities end the history without raising; the detected signal is kept
    on the result.
    """
    history = FlowHistory(surfaces=[surface])
    current = surface
    for step in range(max_steps):
        if current.time >= t_end - 1e-15:
            break
        if float(np.max(current.mean_curvatures)) > stop_curvature:
            history.reason = "curvature_limit"
            break
        dt = min(cfl_fraction * cfl_bound(current), t_end - current.time)
        try:
            current = step_mcf(current, dt)
            current = maybe_resample(current, resample_spacing)
        except SingularityDetected as signal:
            history.reason = "singularity"
            history.singularity = signal
            logger.info(f"⚠️ MCF stopped: {signal}")
            break
        if (step + 1) % record_every == 0:
            history.surfaces.append(current)
        logger.debug(f"mcf step {step}: tau={current.time:.6g}, N={current.size}")
    else:
        history.reason = "step_budget"
    if history.surfaces[-1] is not current:
        history.surfaces.append(current)
    return history


@dataclass(frozen=True)
class ExtinctionEstimate:
    """T and x0 from the linear law 1/max H^2 = (2/(n-k)) (T - tau)."""

    time: float
    point: np.ndarray
    slope: float
    n_minus_k: float

    def as_dict(self) -> dict:
        return {"time": self.time, "point": self.point.tolist(), "slope": self.slope,
                "n_minus_k": self.n_minus_k}


def estimate_extinction(history: FlowHistory, window: float = 0.3, k: int = 0) -> ExtinctionEstimate:
    """
    Fit 1/max H^2 linearly in tau over the last `window` fraction of the history.

    The point x0 is the centroid of the last snapshot for k = 0 and its
    maximal-curvature point (projected to the axis for profiles) otherwise.
    """
    times = history.times
    inv = 1.0 / history.max_curvature ** 2
    start = int(np.floor((1.0 - window) * len(times)))
    sel = slice(min(start, len(times) - 3), None)
    if len(times[sel]) < 3:
        raise DependencyError("need at least three snapshots to estimate the extinction time")
    model = LinearRegression().fit(times[sel, None], inv[sel])
    slope = float(model.coef_[0])
    if slope >= 0.0:
        raise DependencyError("max H does not blow up along the history")
    extinction = -float(model.intercept_) / slope
    last = history.surfaces[-1]
    if k == 0:
        if last.kind == "profile_of_revolution":
            pts, dl, _ = last.quadrature_nodes()
            weights = dl * pts[:, 1] ** (last.n - 1)
            point = last.embed(np.array([[weights @ pts[:, 0] / weights.sum(), 0.0]]))[0]
        else:
            pts, dl, _ = last.quadrature_nodes()
            point = last.embed((dl @ pts / dl.sum())[None, :])[0]
    else:
        idx = int(np.argmax(last.mean_curvatures))
        sample = last.samples[idx:idx + 1]
        if last.kind == "profile_of_revolution":
            sample = sample * (1.0, 0.0)
        point = last.embed(sample)[0]
    return ExtinctionEstimate(time=extinction, point=np.asarray(point, dtype=float), slope=slope,
                              n_minus_k=-2.0 / slope)


# --------------------------------------------------------------------------------------
# rescaled traces
# --------------------------------------------------------------------------------------

@dataclass
class RescaledConfig:
    """Knobs of run_rescaled; `anchor` is 'auto', 'extinction' or 'direct'."""

    anchor: str = "auto"
    k: Optional[int] = None
    cfl_fraction: float = 0.9
    quad: GaussianQuadrature = field(default_factory=GaussianQuadrature)
    graph_radius: Optional[float] = None
    betas: Tuple[float, ...] = (0.5, 0.9)
    max_steps: int = 400_000
    extinction_window: float = 0.3
    record_every: int = 1
    displacement_tolerance: float = 0.1


@dataclass
class RescaledFlowTrace:
    """Integer-time record of a rescaled flow and the per-step data behind it."""

    n: int
    k: int
    anchor: str
    j: List[int] = field(default_factory=list)
    snapshots: List[Surface] = field(default_factory=list)
    gaussian_areas: List[float] = field(default_factory=list)
    deltas: List[float] = field(default_factory=list)
    clamp_count: int = 0
    fits: List[Optional[CylinderFit]] = field(default_factory=list)
    projection_jumps: List[float] = field(default_factory=list)
    axis_values: List[float] = field(default_factory=list)
    displacements: List[float] = field(default_factory=list)
    displacement_violations: int = 0
    max_displacement_ratio: float = 0.0
    step_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_areas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    step_suprema: Dict[int, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    monotonicity_violations: int = 0
    max_area_increase: float = 0.0
    termination: str = "t_end"
    extinction: Optional[ExtinctionEstimate] = None

    @property
    def projections(self) -> List[Optional[np.ndarray]]:
        return [None if f is None else f.cylinder.orthogonal_projection for f in self.fits]

    def graph_norms(self) -> List[Dict[str, float]]:
        return [{} if f is None else dict(f.norms) for f in self.fits]

    def partial_sums(self, beta: float) -> np.ndarray:
        return np.cumsum(np.asarray(self.deltas) ** beta)

    def rows(self) -> List[dict]:
        """One row per integer time j (CSV export)."""
        rows = []
        for i, j in enumerate(self.j):
            fit = self.fits[i] if i < len(self.fits) else None
            row = {
                "j": j,
                "F": self.gaussian_areas[i],
                "delta": self.deltas[i] if i < len(self.deltas) else np.nan,
                "A": self.axis_values[i] if i < len(self.axis_values) else np.nan,
                "projection_jump": self.projection_jumps[i] if i < len(self.projection_jumps) else np.nan,
                "displacement": self.displacements[i] if i < len(self.displacements) else np.nan,
                "measured_radius": np.nan if fit is None else fit.measured_radius,
            }
            for name in ("L2", "W1_2", "W2_2", "W3_2"):
                row[f"w_{name}"] = np.nan if fit is None else fit.norms.get(name, np.nan)
            rows.append(row)
        return rows

    def summary(self) -> dict:
        deltas = np.asarray(self.deltas)
        summary = {
            "n": self.n,
            "k": self.k,
            "anchor": self.anchor,
            "termination": self.termination,
            "integer_times": len(self.j),
            "clamp_count": self.clamp_count,
            "monotonicity_violations": self.monotonicity_violations,
            "max_area_increase": self.max_area_increase,
            "delta_rate": geometric_rate(deltas) if deltas.size else None,
            "axis_sum": float(np.sum(self.axis_values)) if self.axis_values else 0.0,
            "displacement_violations": self.displacement_violations,
            "max_displacement_ratio": self.max_displacement_ratio,
        }
        if self.extinction is not None:
            summary["extinction"] = self.extinction.as_dict()
        return summary


def _profile_weights(surface: Surface) -> np.ndarray:
    """Per-sample Gaussian area weights (trapezoid along the curve)."""
    geo = surface.geometry
    points = surface.samples
    if surface.kind == "plane_curve":
        return geo.spacing * gaussian_weight(points)
    r = np.abs(points[:, 1])
    w = geo.spacing * sphere_area(surface.n) * r ** (surface.n - 1) * gaussian_weight(points)
    if surface.ends != "periodic":
        w[0] *= 0.5
        w[-1] *= 0.5
    return w


def phi_norm(surface: Surface) -> float:
    """Gaussian L^2 norm of phi = H - <x, n>/2."""
    phi = -rescaled_speed(surface)
    return float(np.sqrt(np.sum(_profile_weights(surface) * phi ** 2)))


def _curvature_gradient(surface: Surface) -> Tuple[np.ndarray, np.ndarray]:
    """Intrinsic gradient dH/ds along the curve / meridian, with sub-rounding differences zeroed."""
    h = surface.mean_curvatures
    s = surface.arclength()
    floor = 64.0 * np.finfo(float).eps * max(float(np.max(np.abs(h))), 1.0)
    if surface.kind == "plane_curve" or surface.ends == "periodic":
        total = surface.total_length()
        s_ext = np.concatenate([[s[-1] - total], s, [total]])
        h_ext = np.concatenate([[h[-1]], h, [h[0]]])
        dh = np.gradient(np.where(np.abs(h_ext - np.median(h)) <= floor, np.median(h), h_ext), s_ext)[1:-1]
    else:
        h_clean = np.where(np.abs(h - np.median(h)) <= floor, np.median(h), h)
        dh = np.gradient(h_clean, s, edge_order=2)
    return dh, surface.geometry.tangent


def axis_supremum(surface: Surface, projection: np.ndarray, radius: float) -> float:
    """sup over samples in B_radius of |Pi(grad H)|, with grad H the intrinsic gradient."""
    dh, tangent = _curvature_gradient(surface)
    points = surface.samples
    if surface.kind == "plane_curve":
        vectors = tangent * dh[:, None]
        inside = np.linalg.norm(points, axis=1) <= radius
        if surface.frame is not None:
            vectors = vectors @ surface.frame.T
        if not np.any(inside):
            return 0.0
        return float(np.max(np.linalg.norm(vectors[inside] @ projection.T, axis=1)))
    inside = np.linalg.norm(points, axis=1) <= radius
    if not np.any(inside):
        return 0.0
    omega, _ = sphere_rule(surface.n, 8)
    m = len(omega)
    vx = np.repeat(tangent[inside, 0] * dh[inside], m)
    vr = (tangent[inside, 1] * dh[inside])[:, None, None] * omega[None, :, :]
    vectors = np.column_stack([vx, vr.reshape(-1, surface.n)])
    if surface.frame is not None:
        vectors = vectors @ surface.frame.T
    return float(np.max(np.linalg.norm(vectors @ projection.T, axis=1)))


def _default_k(surface: Surface) -> int:
    if surface.kind == "profile_of_revolution" and surface.ends in ("periodic", "free"):
        return 1
    return 0


def _rescale(surface: Surface, estimate: ExtinctionEstimate) -> Surface:
    remaining = estimate.time - surface.time
    if remaining <= 0.0:
        raise SingularityDetected(estimate.point, surface.time, float(np.max(surface.mean_curvatures)))
    scale = 1.0 / np.sqrt(remaining)
    point = estimate.point if surface.frame is None else surface.frame.T @ estimate.point
    if surface.kind == "profile_of_revolution":
        shift = np.array([point[0], 0.0])
    else:
        shift = point[:2]
    return Surface(kind=surface.kind, ambient_dimension=surface.ambient_dimension,
                   samples=(surface.samples - shift) * scale, outward=surface.outward,
                   ends=surface.ends, period=surface.period * scale, frame=surface.frame,
                   time=float(-np.log(remaining)))


def _rescaled_path(surface: Surface, t_end: float, cfg: RescaledConfig, k: int,
                   trace: RescaledFlowTrace) -> List[Surface]:
    """Rescaled snapshots in time order, by either anchor."""
    if trace.anchor == "direct":
        path = [surface.with_samples(surface.samples, time=0.0)]
        current = path[0]
        steps_per_unit = max(1, int(np.ceil(1.0 / (cfg.cfl_fraction * cfl_bound(current)))))
        dt = 1.0 / steps_per_unit
        for step in range(min(cfg.max_steps, int(round(t_end * steps_per_unit)))):
            try:
                current = step_rescaled(current, min(dt, cfg.cfl_fraction * cfl_bound(current)))
            except SingularityDetected as signal:
                trace.termination = "singularity"
                logger.info(f"⚠️ Rescaled flow stopped: {signal}")
                break
            except StepRejectedError:
                trace.termination = "step_rejected"
                break
            if (step + 1) % cfg.record_every == 0:
                path.append(current)
        return path

    # T - tau ~ (n-k)/(2 max H^2); stop once the rescaled time passes t_end with margin
    stop = float(np.sqrt(max(surface.n - k, 1) / 2.0 * np.exp(t_end + 1.5)))
    history = run_mcf(surface, cfl_fraction=cfg.cfl_fraction, max_steps=cfg.max_steps,
                      record_every=cfg.record_every, stop_curvature=stop)
    if history.reason in ("step_budget",):
        trace.termination = "step_budget"
    estimate = estimate_extinction(history, cfg.extinction_window, k)
    trace.extinction = estimate
    logger.info(f"📊 Extinction estimate T = {estimate.time:.10g}, "
                f"measured n-k = {estimate.n_minus_k:.4f}")
    path = []
    for snap in history.surfaces:
        if estimate.time - snap.time <= 0.0:
            break
        rescaled = _rescale(snap, estimate)
        if rescaled.time > t_end + 1.0:
            break
        path.append(rescaled)
    if history.reason == "singularity" and path and path[-1].time < t_end:
        trace.termination = "singularity"
    return path


def run_rescaled(surface: Surface, t_end: float, cfg: Optional[RescaledConfig] = None) -> RescaledFlowTrace:
    """
    Rescaled MCF from `surface` up to rescaled time t_end with integer-time
    diagnostics: F_j, delta_j, fitted cylinders C_j, |Pi_j - Pi_{j+1}|, A_j and
    the Gaussian-L^2 displacement between consecutive integer times.

    Capped profiles stop at the first singularity that is not the extinction the
    rescaling is anchored on. Stepping with 'extinction' requires a closed
    mean-convex input.
    """
    cfg = cfg or RescaledConfig()
    if not surface.mean_convex and surface.kind != "profile_of_revolution":
        raise GeometryError("run_rescaled needs a mean-convex surface")
    k = _default_k(surface) if cfg.k is None else cfg.k
    anchor = cfg.anchor
    if anchor == "auto":
        anchor = "direct" if _default_k(surface) == 1 and surface.ends != "capped" else "extinction"
    if anchor == "extinction" and surface.kind == "profile_of_revolution" and surface.ends != "capped":
        raise GeometryError("extinction anchoring needs a closed surface")
    trace = RescaledFlowTrace(n=surface.n, k=k, anchor=anchor)
    path = _rescaled_path(surface, t_end, cfg, k, trace)
    if len(path) < 2:
        trace.termination = "too_short"
        return trace

    times = np.array([p.time for p in path])
    areas = np.array([gaussian_area(p, cfg.quad).value for p in path])
    increases = np.diff(areas)
    trace.step_times, trace.step_areas = times, areas
    trace.monotonicity_violations = int(np.sum(increases > MONOTONICITY_TOLERANCE))
    trace.max_area_increase = float(max(np.max(increases), 0.0))
    if trace.monotonicity_violations:
        logger.warning(f"⚠️ Gaussian area increased on {trace.monotonicity_violations} steps "
                       f"(max {trace.max_area_increase:.3e})")

    j_first = int(np.ceil(times[0] - 1e-9))
    j_last = int(np.floor(min(times[-1], t_end) + 1e-9))
    integer_times = list(range(j_first, j_last + 1))
    if not integer_times:
        trace.termination = "too_short"
        return trace
    trace.j = integer_times
    trace.gaussian_areas = [float(np.interp(j, times, areas)) for j in integer_times]
    nearest = [int(np.argmin(np.abs(times - j))) for j in integer_times]
    trace.snapshots = [path[i] for i in nearest]

    graph_radius = 2.0 * surface.n if cfg.graph_radius is None else cfg.graph_radius
    for snap in trace.snapshots:
        try:
            trace.fits.append(fit_cylinder(snap, k, cfg.quad, graph_radius=graph_radius))
        except GraphFailureError as exc:
            logger.info(f"❌ Graph failure at t = {snap.time:.4g}: {exc}")
            trace.termination = "graph_failure"
            break
    fitted = len(trace.fits)

    # gaps delta_j = sqrt(F_{j-1} - F_{j+2}), defined for interior j
    F = trace.gaussian_areas
    for i in range(len(integer_times)):
        if i - 1 < 0 or i + 2 >= len(F):
            trace.deltas.append(float("nan"))
            continue
        radicand = F[i - 1] - F[i + 2]
        if radicand < 0.0:
            if radicand < RADICAND_FLOOR:
                logger.warning(f"⚠️ delta radicand {radicand:.3e} below noise floor at j = {integer_times[i]}")
            trace.clamp_count += 1
            radicand = 0.0
        trace.deltas.append(float(np.sqrt(radicand)))

    phi_norms = np.array([phi_norm(p) for p in path])
    for i in range(fitted - 1):
        j = integer_times[i]
        proj_next = trace.fits[i + 1].cylinder.orthogonal_projection
        trace.projection_jumps.append(
            float(np.linalg.norm(trace.fits[i].cylinder.orthogonal_projection - proj_next, 2)))
        sel = np.flatnonzero((times >= j - 1e-12) & (times <= j + 1 + 1e-12))
        suprema = np.array([axis_supremum(path[s], proj_next, 2.0 * surface.n) for s in sel])
        trace.step_suprema[j] = (times[sel], suprema)
        trace.axis_values.append(axis_grad_H(trace, j))
        trace.displacements.append(float(trapezoid(phi_norms[sel], times[sel])) if sel.size > 1 else 0.0)
    check_displacements(trace, cfg.displacement_tolerance)
    finite = np.asarray([d for d in trace.deltas if np.isfinite(d)])
    logger.info(f"✅ Rescaled trace: {len(integer_times)} integer times, {fitted} fits, "
                f"{trace.clamp_count} clamps, max delta {finite.max() if finite.size else float('nan'):.3e}")
    # trailing NaN deltas are kept so that rows align with j
    return trace


def check_displacements(trace: RescaledFlowTrace, tolerance: float) -> None:
    """Gaussian-L^2 displacement over [j, j+1] against delta_j (1 + tolerance), where delta_j is defined."""
    for i, moved in enumerate(trace.displacements):
        delta = trace.deltas[i] if i < len(trace.deltas) else float("nan")
        if not np.isfinite(delta):
            continue
        if delta > 0.0:
            trace.max_displacement_ratio = max(trace.max_displacement_ratio, moved / delta)
        if moved > delta * (1.0 + tolerance) + DISPLACEMENT_FLOOR:
            trace.displacement_violations += 1
            logger.warning(f"⚠️ Displacement {moved:.3e} over [{trace.j[i]}, {trace.j[i] + 1}] exceeds "
                           f"delta {delta:.3e} by more than {tolerance:.0%}")


def axis_grad_H(trace: RescaledFlowTrace, j: int) -> float:
    """A_j = integral over [j, j+1] of sup_{B_2n} |Pi_{j+1}(grad H)|, trapezoid in time."""
    if j not in trace.step_suprema:
        if j + 1 not in trace.j or trace.j.index(j + 1) >= len(trace.fits):
            raise DependencyError(f"no cylinder fit for time {j + 1}")
        raise DependencyError(f"no per-step suprema recorded for interval [{j}, {j + 1}]")
    times, suprema = trace.step_suprema[j]
    if times.size < 2:
        return 0.0
    return float(trapezoid(suprema, times))


def delta_partial_sum_increments(trace: RescaledFlowTrace, beta: float) -> np.ndarray:
    """Increments delta_j^beta of the partial sums over finite deltas."""
    deltas = np.asarray([d for d in trace.deltas if np.isfinite(d)])
    return deltas ** beta

"""
Gradient flow lines x' = grad u(x) and their asymptotic diagnostics.

A line is integrated in time until |grad u| falls below the stop tolerance, the
limit point is extrapolated from the geometric tail, and the curve is
reparametrized by the remaining arclength s to the limit, so that gamma(0) is
the limit point and gamma_s = -grad u/|grad u|.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp, trapezoid

from src.utils.errors import BudgetError, DegenerateError, DomainExitError, ResolutionError
from src.utils.fitting import geometric_rate

logger = logging.getLogger(__name__)

OSCILLATION_THRESHOLD = 1e-2
STOP_FACTOR = 10.0


# --------------------------------------------------------------------------------------
# evaluators
# --------------------------------------------------------------------------------------

class AnalyticEvaluator:
    """u given by closed-form value / gradient / Hessian callables on R^d."""

    def __init__(self, value: Callable, gradient: Callable, hessian: Callable, dimension: int,
                 n: Optional[int] = None, domain_radius: float = np.inf):
        self._value, self._gradient, self._hessian = value, gradient, hessian
        self.dimension = dimension
        self.n = dimension - 1 if n is None else n
        self.domain_radius = domain_radius

    def value(self, points):
        return np.asarray(self._value(np.atleast_2d(points)), dtype=float)

    def gradient(self, points):
        return np.asarray(self._gradient(np.atleast_2d(points)), dtype=float)

    def hessian(self, points):
        return np.asarray(self._hessian(np.atleast_2d(points)), dtype=float)

    def contains(self, points):
        return np.linalg.norm(np.atleast_2d(points), axis=1) < self.domain_radius


def quadratic_bowl(n: int, dimension: Optional[int] = None) -> AnalyticEvaluator:
    """u = -|x|^2/(2n), the arrival time of the shrinking round sphere."""
    dimension = n + 1 if dimension is None else dimension
    return AnalyticEvaluator(
        value=lambda p: -np.sum(p ** 2, axis=1) / (2.0 * n),
        gradient=lambda p: -p / n,
        hessian=lambda p: np.broadcast_to(-np.eye(dimension) / n, (len(p), dimension, dimension)).copy(),
        dimension=dimension, n=n)


def linear_function(dimension: int = 2) -> AnalyticEvaluator:
    """u = x_1: no critical point, flow lines run off to infinity."""
    e1 = np.eye(dimension)[0]
    return AnalyticEvaluator(value=lambda p: p[:, 0], gradient=lambda p: np.tile(e1, (len(p), 1)),
                             hessian=lambda p: np.zeros((len(p), dimension, dimension)), dimension=dimension)


def spiral_field(epsilon: float = 0.1) -> AnalyticEvaluator:
    """
    Non-gradient control v = (-y, x) + epsilon (-x, -y); integral curves are
    logarithmic spirals into the origin. `value` is -|x|^2/2, which still
    increases along the curves.
    """
    rot = np.array([[-epsilon, -1.0], [1.0, -epsilon]])
    return AnalyticEvaluator(value=lambda p: -0.5 * np.sum(p ** 2, axis=1), gradient=lambda p: p @ rot.T,
                             hessian=lambda p: np.broadcast_to(rot, (len(p), 2, 2)).copy(), dimension=2, n=1)


class MeridianEvaluator:
    """Grid evaluator of a rotational or planar ArrivalField with the field's n."""

    def __init__(self, arrival_field):
        self.grid = arrival_field.evaluator()
        self.dimension = 2
        self.n = arrival_field.n
        self.spacing = arrival_field.spacing
        block = arrival_field.hessian_block[arrival_field.interior]
        self.hessian_scale = float(np.nanpercentile(np.abs(block).max(axis=(-1, -2)), 99)) if block.size else 1.0

    def value(self, points):
        return self.grid.value(points)

    def gradient(self, points):
        return self.grid.gradient(points)

    def hessian(self, points):
        return self.grid.hessian(points)

    def contains(self, points):
        return self.grid.contains(points)


def as_evaluator(source):
    """Accept an evaluator or an ArrivalField."""
    if hasattr(source, "gradient") and hasattr(source, "contains"):
        return source
    return MeridianEvaluator(source)


# --------------------------------------------------------------------------------------
# tracing
# --------------------------------------------------------------------------------------

@dataclass
class TraceConfig:
    stop_tol: Optional[float] = None
    stop_factor: float = STOP_FACTOR
    rtol: float = 1e-10
    atol: float = 1e-12
    t_max: float = 1e3
    samples: int = 400


@dataclass
class FlowLine:
    """Arclength-parametrized gradient line; arrays are ordered by decreasing s."""

    n: int
    start: np.ndarray
    limit_point: np.ndarray
    critical_value: float
    length: float
    times: np.ndarray
    path: np.ndarray
    path_values: np.ndarray
    s: np.ndarray
    gamma: np.ndarray
    u: np.ndarray
    grad_norm: np.ndarray
    gamma_s: np.ndarray
    gamma_ss: np.ndarray
    gamma_ss_fd: np.ndarray
    termination: str
    limit_in_critical_set: bool
    monotonicity_violation: float
    axis: Optional[np.ndarray] = None

    def axis_projection(self, axis: Optional[np.ndarray] = None) -> np.ndarray:
        """|Pi_axis(gamma_s)| along the line."""
        axis = self.axis if axis is None else axis
        if axis is None or np.size(axis) == 0:
            return np.zeros(len(self.s))
        basis = np.atleast_2d(axis)
        return np.linalg.norm(self.gamma_s @ basis.T, axis=1)

    def tail_lengths(self) -> np.ndarray:
        """Remaining arclength to the limit from each recorded time."""
        steps = np.linalg.norm(np.diff(self.path, axis=0), axis=1)
        tail = np.concatenate([np.cumsum(steps[::-1])[::-1], [0.0]])
        return tail + np.linalg.norm(self.path[-1] - self.limit_point)

    def rows(self) -> List[dict]:
        proj = self.axis_projection()
        rows = []
        for i in range(len(self.s)):
            row = {"s": self.s[i], "u": self.u[i], "grad_norm": self.grad_norm[i],
                   "gamma_ss_norm": float(np.linalg.norm(self.gamma_ss[i])), "axis_projection": proj[i]}
            for d in range(self.gamma.shape[1]):
                row[f"x{d}"] = self.gamma[i, d]
                row[f"gamma_s{d}"] = self.gamma_s[i, d]
            rows.append(row)
        return rows

    def summary(self) -> dict:
        return {"start": self.start.tolist(), "limit_point": self.limit_point.tolist(),
                "length": self.length, "termination": self.termination,
                "limit_in_critical_set": self.limit_in_critical_set,
                "monotonicity_violation": self.monotonicity_violation}


def _aitken(p1: np.ndarray, p2: np.ndarray, p3: np.ndarray) -> np.ndarray:
    """
    Geometric extrapolation from three equally spaced samples. Falls back to p3
    unless the differences contract along a nearly fixed direction.
    """
    d1, d2 = p2 - p1, p3 - p2
    n1, n2 = np.linalg.norm(d1), np.linalg.norm(d2)
    if n1 == 0.0 or n2 == 0.0:
        return p3
    q = n2 / n1
    if not 0.0 < q < 1.0:
        return p3
    turn = float(np.arccos(np.clip(d1 @ d2 / (n1 * n2), -1.0, 1.0)))
    if turn > 0.1 * (1.0 - q):
        return p3
    return p3 + d2 * q / (1.0 - q)


def _tangential_curvature(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """gamma_ss = (I - N N^T) Hess grad u / |grad u|^2, the level-set projection of grad log|grad u|."""
    norm2 = np.sum(grad ** 2, axis=1)
    v = np.einsum("mij,mj->mi", hess, grad) / norm2[:, None]
    unit = grad / np.sqrt(norm2)[:, None]
    return v - np.sum(v * unit, axis=1)[:, None] * unit


def trace(evaluator, x0: Sequence[float], tol: Optional[TraceConfig] = None,
          critical_points: Optional[np.ndarray] = None, axis: Optional[np.ndarray] = None) -> FlowLine:
    """
    Integrate x' = grad u from x0 (RK45 with dense output) until |grad u| < stop_tol.

    Raises:
        DomainExitError: the trajectory leaves the field's domain
        BudgetError: t_max is reached without approaching a critical point
    """
    cfg = tol or TraceConfig()
    evaluator = as_evaluator(evaluator)
    x0 = np.asarray(x0, dtype=float)
    if not evaluator.contains(x0)[0]:
        raise DomainExitError("starting point lies outside the field domain", x0)
    g0 = evaluator.gradient(x0)[0]
    if np.linalg.norm(g0) == 0.0:
        raise DegenerateError("starting point is critical")
    stop_tol = cfg.stop_tol
    if stop_tol is None:
        if isinstance(evaluator, MeridianEvaluator):
            stop_tol = cfg.stop_factor * evaluator.spacing * evaluator.hessian_scale
        else:
            stop_tol = 1e-8

    def rhs(_, x):
        return evaluator.gradient(x)[0]

    def small_gradient(_, x):
        return np.linalg.norm(evaluator.gradient(x)[0]) - stop_tol

    small_gradient.terminal = True
    small_gradient.direction = -1

    def exit_domain(_, x):
        return 1.0 if evaluator.contains(x)[0] else -1.0

    exit_domain.terminal = True

    sol = solve_ivp(rhs, (0.0, cfg.t_max), x0, method="RK45", rtol=cfg.rtol, atol=cfg.atol,
                    dense_output=True, events=[small_gradient, exit_domain])
    if sol.status == 1 and sol.t_events[1].size:
        raise DomainExitError("flow line left the field domain", sol.y[:, -1])
    if sol.status != 1:
        raise BudgetError(f"no critical point approached within t = {cfg.t_max:g} "
                          f"(|x| = {np.linalg.norm(sol.y[:, -1]):.3g})")
    t_end = float(sol.t[-1])

    # dense path for arclength
    t_dense = np.unique(np.concatenate([np.linspace(a, b, 9)[:-1] for a, b in zip(sol.t[:-1], sol.t[1:])]
                                       + [[t_end]]))
    path = sol.sol(t_dense).T
    values = evaluator.value(path)
    grads = evaluator.gradient(path)
    monotone = float(max(0.0, -np.min(np.diff(values)))) if len(values) > 1 else 0.0
    t_a, t_b = t_dense[-3], t_end
    p1, p2, p3 = sol.sol(t_a - (t_b - t_a)), sol.sol(t_a), sol.sol(t_b)
    limit = _aitken(p1, p2, p3)

    chord = np.linalg.norm(np.diff(path, axis=0), axis=1)
    speed = np.linalg.norm(grads, axis=1)
    arc = cumulative_trapezoid(speed, t_dense, initial=0.0)
    arc = np.where(np.isfinite(arc), arc, np.concatenate([[0.0], np.cumsum(chord)]))
    tail_gap = float(np.linalg.norm(path[-1] - limit))
    total = float(arc[-1] + tail_gap)
    s_path = total - arc

    s_min, s_max = max(s_path[-1], 1e-300), s_path[0]
    s_grid = np.geomspace(s_max, s_min, cfg.samples) if s_max > s_min * (1.0 + 1e-12) else np.array([s_max])
    t_of_s = np.interp(s_grid[::-1], s_path[::-1], t_dense[::-1])[::-1]
    gamma = sol.sol(t_of_s).T
    g = evaluator.gradient(gamma)
    gnorm = np.linalg.norm(g, axis=1)
    gamma_s = -g / gnorm[:, None]
    hess = evaluator.hessian(gamma)
    gamma_ss = _tangential_curvature(g, hess)
    gamma_ss_fd = np.gradient(gamma_s, s_grid, axis=0) if len(s_grid) > 2 else np.zeros_like(gamma_s)

    critical_value = float(evaluator.value(limit)[0])
    in_critical = True
    if critical_points is not None and len(critical_points):
        spacing = getattr(evaluator, "spacing", 0.0)
        in_critical = bool(np.min(np.linalg.norm(np.atleast_2d(critical_points) - limit, axis=1))
                           <= 2.0 * max(spacing, stop_tol))
    logger.debug(f"flow line from {x0.tolist()}: length {total:.6f}, limit {limit.tolist()}")
    return FlowLine(n=evaluator.n, start=x0, limit_point=limit, critical_value=critical_value, length=total,
                    times=t_dense, path=path, path_values=values, s=s_grid, gamma=gamma,
                    u=evaluator.value(gamma), grad_norm=gnorm, gamma_s=gamma_s, gamma_ss=gamma_ss,
                    gamma_ss_fd=gamma_ss_fd, termination="stop_tolerance",
                    limit_in_critical_set=in_critical, monotonicity_violation=monotone, axis=axis)


def trace_many(evaluator, starts: Sequence[Sequence[float]], tol: Optional[TraceConfig] = None,
               threads: int = 1, **kwargs) -> List[FlowLine]:
    """Trace several lines; results keep the order of `starts`."""
    evaluator = as_evaluator(evaluator)
    if threads <= 1:
        return [trace(evaluator, x0, tol, **kwargs) for x0 in starts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda x0: trace(evaluator, x0, tol, **kwargs), starts))


# --------------------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------------------

def _tail(line: FlowLine, fraction: float, minimum: int = 5) -> np.ndarray:
    s_cut = line.s[-1] + fraction * (line.s[0] - line.s[-1])
    idx = np.flatnonzero(line.s <= s_cut)
    if idx.size < minimum:
        raise ResolutionError(f"only {idx.size} samples in the asymptotic window")
    return idx


def asymptotics(line: FlowLine, k: int, axis: Optional[np.ndarray] = None,
                tail_fraction: float = 0.25) -> Dict[str, float]:
    """
    Tail-max relative deviations of u(gamma(s)) from -s^2/(2(n-k)) and of
    |grad u|^2 from s^2/(n-k)^2, the tail-max of |Pi_axis(gamma_s)|, and the
    fraction of tail samples inside B_{2n sqrt(-u)}(gamma(0)).
    """
    n = line.n
    if not 0 <= k < n + 1 or n - k <= 0:
        raise ValueError(f"invalid k = {k} for n = {n}")
    idx = _tail(line, tail_fraction)
    s = line.s[idx]
    depth = line.critical_value - line.u[idx]
    value_ratio = depth / (s ** 2 / (2.0 * (n - k)))
    grad_ratio = line.grad_norm[idx] ** 2 / (s ** 2 / (n - k) ** 2)
    proj = line.axis_projection(axis)[idx]
    dist = np.linalg.norm(line.gamma[idx] - line.limit_point, axis=1)
    inside = dist <= 2.0 * n * np.sqrt(np.clip(depth, 0.0, None)) + 1e-12
    report = {
        "value_deviation": float(np.max(np.abs(value_ratio - 1.0))),
        "gradient_deviation": float(np.max(np.abs(grad_ratio - 1.0))),
        "axis_projection_tail_max": float(np.max(proj)),
        "ball_containment": float(np.mean(inside)),
        "tail_samples": int(idx.size),
    }
    return report


def curvature_diagnostics(line: FlowLine, Lambda: float = 2.0) -> Dict[str, float]:
    """s|gamma_ss|, windowed integrals W(s) = int_s^{Lambda s} |gamma_ss| and the FD/formula check."""
    if Lambda <= 1.0:
        raise ValueError("Lambda must exceed 1")
    s = line.s[::-1]
    kappa = np.linalg.norm(line.gamma_ss[::-1], axis=1)
    cumulative = cumulative_trapezoid(kappa, s, initial=0.0)
    reachable = s * Lambda <= s[-1]
    windows = np.interp(s[reachable] * Lambda, s, cumulative) - cumulative[reachable]
    fd = line.gamma_ss_fd[::-1]
    # finite differences are unreliable at the two ends of the grid
    inner = slice(2, -2) if len(s) > 6 else slice(None)
    formula_norm = float(np.linalg.norm(line.gamma_ss[::-1][inner]))
    diff_norm = float(np.linalg.norm((fd - line.gamma_ss[::-1])[inner]))
    scale = float(np.max(kappa)) if kappa.size else 0.0
    if formula_norm <= 1e-9 * max(1.0, scale * len(s)):
        discrepancy = 0.0 if diff_norm <= 1e-6 else float("inf")
    else:
        discrepancy = diff_norm / formula_norm
    return {
        "s_kappa_tail": float(np.max((s * kappa)[: max(len(s) // 10, 1)])),
        "s_kappa_max": float(np.max(s * kappa)),
        "window_tail": float(np.max(windows[: max(len(windows) // 10, 1)])) if windows.size else 0.0,
        "window_max": float(np.max(windows)) if windows.size else 0.0,
        "total_curvature": float(cumulative[-1]),
        "fd_formula_discrepancy": discrepancy,
        "window_curve": np.column_stack([s[reachable], windows]) if windows.size else np.zeros((0, 2)),
    }


def _max_pairwise_angle(vectors: np.ndarray, limit: int = 512) -> float:
    """Largest angle between unit vectors, over at most `limit` evenly spaced rows."""
    if len(vectors) > limit:
        vectors = vectors[np.linspace(0, len(vectors) - 1, limit).astype(int)]
    cos = np.clip(vectors @ vectors.T, -1.0, 1.0)
    return float(np.arccos(np.min(cos)))


def limit_estimators(line: FlowLine, threshold: float = OSCILLATION_THRESHOLD, tail_points: int = 12,
                     axis: Optional[np.ndarray] = None) -> Dict[str, object]:
    """
    Secant and tangent limits over shrinking tails, the oscillation osc(T) of
    each, and the split of the tangent limit into its axis part (should vanish)
    and its cross-section part (Cauchy over dyadic s_j).
    """
    rel = line.path - line.limit_point
    dist = np.linalg.norm(rel, axis=1)
    usable = dist > 1e-14 * max(1.0, float(np.max(dist)))
    secants = rel[usable] / dist[usable, None]
    tails = line.tail_lengths()[usable]
    cut_lengths = np.geomspace(tails[0], max(tails[-1], tails[0] * 1e-6), tail_points)
    sec_osc, tan_osc = [], []
    for cut in cut_lengths:
        sel = tails <= cut
        if sel.sum() < 2:
            break
        sec_osc.append(_max_pairwise_angle(secants[sel]))
    tangents = line.gamma_s
    for cut in np.geomspace(line.s[0], line.s[-1], tail_points):
        sel = line.s <= cut * (1.0 + 1e-12)
        if sel.sum() < 2:
            break
        tan_osc.append(_max_pairwise_angle(tangents[sel]))
    sec_osc, tan_osc = np.array(sec_osc), np.array(tan_osc)
    final_sec = float(sec_osc[-1]) if sec_osc.size else float("nan")
    final_tan = float(tan_osc[-1]) if tan_osc.size else float("nan")
    non_decreasing = sec_osc.size > 1 and bool(np.all(np.diff(sec_osc) >= -1e-12)) and final_sec >= threshold
    secant_limit = secants[-1] if secants.size else np.full(line.path.shape[1], np.nan)
    tangent_limit = tangents[-1]
    detected = bool(final_sec < threshold and final_tan < threshold)
    agreement = float(np.arccos(np.clip(secant_limit @ tangent_limit, -1.0, 1.0))) if secants.size else float("nan")

    basis = line.axis if axis is None else axis
    proj_axis = line.axis_projection(basis)
    dyadic = line.s[0] * 0.5 ** np.arange(int(np.floor(np.log2(line.s[0] / line.s[-1]))) + 1)
    idx = [int(np.argmin(np.abs(line.s - sj))) for sj in dyadic]
    cross = tangents[idx]
    if basis is not None and np.size(basis):
        b = np.atleast_2d(basis)
        cross = cross - (cross @ b.T) @ b
    increments = np.linalg.norm(np.diff(cross, axis=0), axis=1)
    report = {
        "limit_detected": detected,
        "no_limit_detected": not detected,
        "oscillation_non_decreasing": non_decreasing,
        "secant_oscillation": sec_osc.tolist(),
        "tangent_oscillation": tan_osc.tolist(),
        "final_secant_oscillation": final_sec,
        "final_tangent_oscillation": final_tan,
        "secant_limit": secant_limit.tolist(),
        "tangent_limit": tangent_limit.tolist(),
        "secant_tangent_angle": agreement,
        "axis_part_tail": float(np.max(proj_axis[-max(len(proj_axis) // 10, 1):])),
        "cross_section_increments": increments.tolist(),
        "cross_section_rate": geometric_rate(increments),
    }
    if not detected:
        logger.info(f"⚠️ No limit detected: final secant oscillation {final_sec:.3g}")
    return report


def dyadic_diagnostics(line: FlowLine, k: int, projection: Optional[np.ndarray] = None) -> Dict[str, object]:
    """
    Rescaled time t(s) = -log(-u(gamma(s))): the range of t(s) + 2 log s against
    log(2(n-k)), the ratios log(s_{j+1}/s_j) where t(s_j) = j, and the chain
    sum_j |Pi_{j+1}(gamma_s(s_j) - gamma_s(s_{j+1}))| over unit tangents.

    ``projection`` is one matrix or a stack with one matrix per dyadic time; by
    default it projects onto the cross-section orthogonal to the line's axis.
    """
    depth = line.critical_value - line.u
    ok = depth > 0
    s, depth, tangents = line.s[ok], depth[ok], line.gamma_s[ok]
    t = -np.log(depth)
    offset = t + 2.0 * np.log(s)
    order = np.argsort(t)
    j_values = np.arange(int(np.ceil(t.min())), int(np.floor(t.max())) + 1)
    s_j = np.interp(j_values, t[order], s[order])
    dim = tangents.shape[1]
    tau_j = np.column_stack([np.interp(j_values, t[order], tangents[order, d]) for d in range(dim)])
    tau_j /= np.maximum(np.linalg.norm(tau_j, axis=1), 1e-300)[:, None]
    ratios = np.log(s_j[1:] / s_j[:-1]) if s_j.size > 1 else np.zeros(0)
    if projection is None:
        proj = np.eye(dim)
        if line.axis is not None:
            b = np.atleast_2d(line.axis)
            proj = proj - b.T @ b
    else:
        proj = np.asarray(projection, dtype=float)
    steps = np.diff(tau_j, axis=0)
    if proj.ndim == 3:
        if proj.shape[0] < steps.shape[0] + 1:
            raise ValueError(f"need {steps.shape[0] + 1} projections, got {proj.shape[0]}")
        chain = np.linalg.norm(np.einsum("jab,jb->ja", proj[1:steps.shape[0] + 1], steps), axis=1)
    else:
        chain = np.linalg.norm(steps @ proj.T, axis=1)
    target = float(np.log(2.0 * (line.n - k)))
    return {
        "offset_min": float(np.min(offset)),
        "offset_max": float(np.max(offset)),
        "offset_target": target,
        "offset_tail_error": float(abs(offset[np.argmax(t)] - target)),
        "log_ratio_max": float(np.max(np.abs(ratios))) if ratios.size else 0.0,
        "chain_partial_sums": np.cumsum(chain).tolist(),
        "chain_increments": chain.tolist(),
    }


def finite_length(line: FlowLine) -> Dict[str, float]:
    tails = line.tail_lengths()
    return {"length": line.length, "final_tail": float(tails[-1]),
            "tail_ratio": float(tails[-1] / max(tails[0], 1e-300)),
            "chord_length": float(np.sum(np.linalg.norm(np.diff(line.path, axis=0), axis=1)))}

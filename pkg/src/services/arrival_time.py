"""
Arrival time of mean-convex flows.

Fields are stored on two-dimensional grids: the plane itself for curves
(symmetry "none") and a meridian grid (x, rho), symmetric in rho, for surfaces
of revolution in R^{n+1} (symmetry "rotational"). Rotational fields carry the
(n - 1) extra principal directions implicitly: the ambient Hessian is the
meridian block plus (n - 1) copies of u_rho / rho.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.interpolate import RectBivariateSpline
from scipy.spatial import cKDTree
from sklearn.linear_model import LinearRegression

from src.services.geometry_core import Surface
from src.services.mcf_engine import cfl_bound, maybe_resample, step_mcf
from src.utils.errors import (
    BoundaryError,
    GeometryError,
    IllConditionedFitError,
    PartialFieldError,
    SingularityDetected,
)
from src.utils.fitting import PowerLawFit, fit_power_law

logger = logging.getLogger(__name__)

GRADIENT_FLOOR_FACTOR = 10.0
KERNEL_THRESHOLD = 0.2
EXPONENT_MIN_SAMPLES = 20
EXPONENT_MIN_DECADES = 2.0


@dataclass
class GridConfig:
    """Grid and front-tracking knobs for compute_arrival."""

    spacing: float = 1.0 / 64.0
    margin_cells: int = 4
    cfl_fraction: float = 0.9
    front_spacing_factor: float = 0.5
    record_displacement: float = 0.5
    max_steps: int = 2_000_000
    min_front_samples: int = 16


@dataclass(eq=False)
class ArrivalField:
    """Gridded arrival time u <= 0 with sup u = 0, defined on `mask`."""

    values: np.ndarray
    spacing: float
    origin: np.ndarray
    mask: np.ndarray
    ambient_dimension: int
    symmetry: str = "none"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.origin = np.asarray(self.origin, dtype=float)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise GeometryError("arrival fields are two-dimensional with a matching mask")
        if self.symmetry not in ("none", "rotational"):
            raise GeometryError(f"unknown symmetry '{self.symmetry}'")

    @property
    def n(self) -> int:
        return self.ambient_dimension - 1

    @cached_property
    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        return tuple(self.origin[i] + self.spacing * np.arange(self.values.shape[i]) for i in range(2))

    @cached_property
    def coordinates(self) -> np.ndarray:
        """(N0, N1, 2) array of grid points."""
        a, b = self.axes
        return np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1)

    @cached_property
    def masked_values(self) -> np.ndarray:
        return np.where(self.mask, self.values, np.nan)

    @cached_property
    def gradient(self) -> np.ndarray:
        """(N0, N1, 2) centred-difference gradient; NaN where the stencil leaves the mask."""
        g0, g1 = np.gradient(self.masked_values, self.spacing)
        return np.stack([g0, g1], axis=-1)

    @cached_property
    def hessian_block(self) -> np.ndarray:
        """(N0, N1, 2, 2) meridian / planar Hessian by centred differences."""
        h = self.spacing
        u = self.masked_values
        out = np.full(u.shape + (2, 2), np.nan)
        c = u[1:-1, 1:-1]
        out[1:-1, 1:-1, 0, 0] = (u[2:, 1:-1] - 2.0 * c + u[:-2, 1:-1]) / h ** 2
        out[1:-1, 1:-1, 1, 1] = (u[1:-1, 2:] - 2.0 * c + u[1:-1, :-2]) / h ** 2
        cross = (u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]) / (4.0 * h ** 2)
        out[1:-1, 1:-1, 0, 1] = out[1:-1, 1:-1, 1, 0] = cross
        return out

    @cached_property
    def grad_norm(self) -> np.ndarray:
        return np.linalg.norm(self.gradient, axis=-1)

    def _rotational_term(self, grad: np.ndarray, block: np.ndarray, rho: np.ndarray) -> np.ndarray:
        on_axis = np.abs(rho) < 0.5 * self.spacing
        safe = np.where(on_axis, 1.0, rho)
        return np.where(on_axis, block[..., 1, 1], grad[..., 1] / safe)

    @cached_property
    def laplacian(self) -> np.ndarray:
        block = self.hessian_block
        lap = block[..., 0, 0] + block[..., 1, 1]
        if self.symmetry == "rotational":
            rho = self.coordinates[..., 1]
            lap = lap + (self.n - 1) * self._rotational_term(self.gradient, block, rho)
        return lap

    def ambient_hessian(self, index: Tuple[int, int], grad: Optional[np.ndarray] = None,
                        block: Optional[np.ndarray] = None) -> np.ndarray:
        """(n+1, n+1) Hessian at a grid cell (or from supplied meridian derivatives)."""
        grad = self.gradient[index] if grad is None else grad
        block = self.hessian_block[index] if block is None else block
        if self.symmetry == "none":
            return np.array(block)
        rho = self.coordinates[index][1]
        extra = self._rotational_term(np.asarray(grad)[None], np.asarray(block)[None], np.array([rho]))[0]
        hess = np.zeros((self.ambient_dimension, self.ambient_dimension))
        hess[:2, :2] = block
        for i in range(2, self.ambient_dimension):
            hess[i, i] = extra
        return hess

    @cached_property
    def level_set_curvature(self) -> np.ndarray:
        """div(grad u / |grad u|), the mean curvature of the level sets."""
        grad, block = self.gradient, self.hessian_block
        norm2 = np.sum(grad ** 2, axis=-1)
        quad = np.einsum("...i,...ij,...j->...", grad, block, grad)
        with np.errstate(invalid="ignore", divide="ignore"):
            return (self.laplacian - quad / norm2) / np.sqrt(norm2)

    @cached_property
    def interior(self) -> np.ndarray:
        """Cells whose 3x3 stencil lies in the mask."""
        return ndimage.binary_erosion(self.mask, structure=np.ones((3, 3)), border_value=0)

    def filled_values(self) -> np.ndarray:
        """Values extended outside the mask by nearest valid neighbour (for interpolation)."""
        _, (i0, i1) = ndimage.distance_transform_edt(~self.mask, return_indices=True)
        return self.values[i0, i1]

    def evaluator(self) -> "GridEvaluator":
        return GridEvaluator(self)

    def summary(self) -> dict:
        return {
            "shape": list(self.values.shape),
            "spacing": self.spacing,
            "ambient_dimension": self.ambient_dimension,
            "symmetry": self.symmetry,
            "cells": int(self.mask.sum()),
            "min_u": float(np.min(self.values[self.mask])),
            "max_u": float(np.max(self.values[self.mask])),
        }


class GridEvaluator:
    """Bicubic spline of an arrival field with value / gradient / Hessian queries."""

    def __init__(self, field: ArrivalField):
        self.field = field
        a, b = field.axes
        self.spline = RectBivariateSpline(a, b, field.filled_values(), kx=3, ky=3, s=0)
        self.dimension = 2
        self._lo = np.array([a[0], b[0]])
        self._hi = np.array([a[-1], b[-1]])
        self._mask = RectBivariateSpline(a, b, field.mask.astype(float), kx=1, ky=1, s=0)

    def value(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return self.spline.ev(p[:, 0], p[:, 1])

    def gradient(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        return np.column_stack([self.spline.ev(p[:, 0], p[:, 1], dx=1),
                                self.spline.ev(p[:, 0], p[:, 1], dy=1)])

    def hessian(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        uxx = self.spline.ev(p[:, 0], p[:, 1], dx=2)
        uyy = self.spline.ev(p[:, 0], p[:, 1], dy=2)
        uxy = self.spline.ev(p[:, 0], p[:, 1], dx=1, dy=1)
        return np.stack([np.stack([uxx, uxy], -1), np.stack([uxy, uyy], -1)], -2)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        inside_box = np.all((p >= self._lo) & (p <= self._hi), axis=1)
        return inside_box & (self._mask.ev(p[:, 0], p[:, 1]) > 0.999)


# --------------------------------------------------------------------------------------
# compute_arrival
# --------------------------------------------------------------------------------------

def _front_polygon(surface: Surface) -> np.ndarray:
    if surface.kind == "plane_curve":
        return surface.samples
    if surface.ends != "capped":
        raise GeometryError("arrival times need a closed surface")
    upper = surface.samples
    return np.vstack([upper, (upper * (1.0, -1.0))[-2:0:-1]])


def _inside_polygon(points: np.ndarray, polygon: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Even-odd ray casting, vectorized over points in chunks."""
    a = polygon
    b = np.roll(polygon, -1, axis=0)
    inside = np.zeros(len(points), dtype=bool)
    for start in range(0, len(points), chunk):
        p = points[start:start + chunk]
        py = p[:, 1:2]
        straddle = (a[None, :, 1] > py) != (b[None, :, 1] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = a[None, :, 0] + (py - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / (
                b[None, :, 1] - a[None, :, 1])
        hits = straddle & (p[:, 0:1] < x_cross)
        inside[start:start + chunk] = np.sum(hits, axis=1) % 2 == 1
    return inside


def _signed_depth(front: Surface, points: np.ndarray) -> np.ndarray:
    """
    Signed distance to the front, positive inside, from the nearest sample with a
    second-order curvature correction.
    """
    geo = front.geometry
    query = points
    if front.kind == "profile_of_revolution":
        query = np.column_stack([points[:, 0], np.abs(points[:, 1])])
    tree = cKDTree(front.samples)
    _, idx = tree.query(query)
    rel = query - front.samples[idx]
    offset_n = np.einsum("ij,ij->i", rel, geo.normal[idx])
    offset_t = np.einsum("ij,ij->i", rel, geo.tangent[idx])
    return -(offset_n + 0.5 * geo.curvature[idx] * offset_t ** 2)


def _grid_for(surface: Surface, cfg: GridConfig) -> Tuple[np.ndarray, Tuple[int, int], str]:
    h = cfg.spacing
    pts = surface.samples
    pad = cfg.margin_cells * h
    if surface.kind == "plane_curve":
        lo = np.floor((pts.min(axis=0) - pad) / h) * h
        hi = np.ceil((pts.max(axis=0) + pad) / h) * h
        shape = tuple(int(round((hi[i] - lo[i]) / h)) + 1 for i in range(2))
        return lo, shape, "none"
    x_lo = np.floor((pts[:, 0].min() - pad) / h) * h
    x_hi = np.ceil((pts[:, 0].max() + pad) / h) * h
    m = int(np.ceil((pts[:, 1].max() + pad) / h))
    return np.array([x_lo, -m * h]), (int(round((x_hi - x_lo) / h)) + 1, 2 * m + 1), "rotational"


def compute_arrival(initial: Surface, grid_cfg: Optional[GridConfig] = None) -> ArrivalField:
    """
    Arrival time of the MCF starting at `initial`, recorded where the front crosses
    grid cells (linear interpolation in time between recordings of the signed
    distance). Cells left when the front becomes unresolvable are filled with the
    remaining time of a sphere of the front's mean curvature. A singularity that is
    not an extinction ends the sweep with PartialFieldError carrying the field.
    """
    cfg = grid_cfg or GridConfig()
    if not initial.mean_convex:
        raise GeometryError("compute_arrival needs a mean-convex initial surface")
    h = cfg.spacing
    origin, shape, symmetry = _grid_for(initial, cfg)
    field_kw = dict(spacing=h, origin=origin, ambient_dimension=initial.ambient_dimension, symmetry=symmetry)
    a = origin[0] + h * np.arange(shape[0])
    b = origin[1] + h * np.arange(shape[1])
    grid = np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1).reshape(-1, 2)
    domain = _inside_polygon(grid, _front_polygon(initial))
    cells = np.flatnonzero(domain)
    arrival = np.full(grid.shape[0], np.nan)

    front_spacing = cfg.front_spacing_factor * h
    front = initial.with_samples(initial.samples, time=0.0)
    front = maybe_resample(front, front_spacing, min_count=cfg.min_front_samples)
    pending = cells.copy()
    depth_prev = _signed_depth(front, grid[pending])
    time_prev = 0.0
    moved = 0.0
    singular: Optional[SingularityDetected] = None
    steps = 0
    while pending.size and steps < cfg.max_steps:
        diameter = float(np.max(np.ptp(front.samples, axis=0)))
        if diameter < 2.0 * h:
            break
        dt = cfg.cfl_fraction * cfl_bound(front)
        try:
            new_front = step_mcf(front, dt)
        except SingularityDetected as signal:
            singular = signal
            break
        moved += dt * float(np.max(np.abs(front.mean_curvatures)))
        front = maybe_resample(new_front, front_spacing, min_count=cfg.min_front_samples)
        steps += 1
        if moved < cfg.record_displacement * h:
            continue
        moved = 0.0
        depth = _signed_depth(front, grid[pending])
        crossed = depth <= 0.0
        if np.any(crossed):
            d0, d1 = depth_prev[crossed], depth[crossed]
            frac = np.where(d0 > 0.0, d0 / np.maximum(d0 - d1, 1e-300), 0.0)
            arrival[pending[crossed]] = time_prev + frac * (front.time - time_prev)
        pending, depth_prev, time_prev = pending[~crossed], depth[~crossed], front.time
        logger.debug(f"arrival sweep tau={front.time:.6g}: {pending.size} cells pending")

    depth_left = _signed_depth(front, grid[pending]) if pending.size else np.zeros(0)
    mean_h = float(np.mean(front.mean_curvatures))
    if singular is None and pending.size:
        # extinction: remaining time of a sphere with the front's mean curvature
        radius = front.n / max(mean_h, 1e-300)
        d = np.clip(depth_left, 0.0, None)
        arrival[pending] = front.time + d * (2.0 * radius - d) / (2.0 * front.n)
        pending = pending[:0]
    elif singular is not None and pending.size:
        arrival, pending = _fill_neck(front, grid, arrival, pending, singular, h)

    swept = ~np.isnan(arrival)
    values = np.where(swept, arrival, 0.0)
    values = values - np.max(values[swept])
    mask = swept.reshape(shape)
    result = ArrivalField(values=np.where(mask, values.reshape(shape), 0.0), mask=mask, **field_kw)
    if pending.size:
        unswept = np.zeros(grid.shape[0], dtype=bool)
        unswept[pending] = True
        logger.info(f"⚠️ Flow stopped at tau = {front.time:.6g} with {pending.size} cells unswept")
        raise PartialFieldError(f"front stopped before sweeping the domain ({pending.size} cells left)",
                                unswept=unswept.reshape(shape), field=result)
    logger.info(f"✅ Arrival field computed: {int(mask.sum())} cells, {steps} front steps, "
                f"extinction at tau = {front.time:.6g}")
    return result


def _fill_neck(front: Surface, grid: np.ndarray, arrival: np.ndarray, pending: np.ndarray,
               signal: SingularityDetected, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Fill cells in the final neck with the remaining time of the local cylinder (k = 1)."""
    if front.kind != "profile_of_revolution" or front.n < 2:
        return arrival, pending
    x_pinch = float(signal.location[0])
    samples = front.samples
    order = np.argsort(samples[:, 0])
    radius_at = np.interp(grid[pending, 0], samples[order, 0], samples[order, 1])
    neck = float(np.interp(x_pinch, samples[order, 0], samples[order, 1]))
    near = np.abs(grid[pending, 0] - x_pinch) <= max(2.0 * neck, 2.0 * h)
    rho2 = grid[pending, 1] ** 2
    arrival[pending[near]] = front.time + np.clip(radius_at[near] ** 2 - rho2[near], 0.0, None) / (
        2.0 * (front.n - 1))
    return arrival, pending[~near]


def field_from_function(func, n: int, lo, hi, spacing: float, inside=None,
                        symmetry: str = "none") -> ArrivalField:
    """Sample an analytic u on a 2D grid (planar or meridian); values shifted so sup u = 0."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    shape = tuple(int(round((hi[i] - lo[i]) / spacing)) + 1 for i in range(2))
    a = lo[0] + spacing * np.arange(shape[0])
    b = lo[1] + spacing * np.arange(shape[1])
    pts = np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1)
    values = np.asarray(func(pts.reshape(-1, 2)), dtype=float).reshape(shape)
    mask = np.ones(shape, dtype=bool) if inside is None else np.asarray(inside(pts.reshape(-1, 2))).reshape(shape)
    values = np.where(mask, values - np.max(values[mask]), 0.0)
    return ArrivalField(values=values, spacing=spacing, origin=lo, mask=mask,
                        ambient_dimension=n + 1, symmetry=symmetry)


# --------------------------------------------------------------------------------------
# analyses
# --------------------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualReport:
    values: np.ndarray
    evaluable: np.ndarray
    max_norm: float
    l2_norm: float
    gradient_floor: float

    def as_dict(self) -> dict:
        return {"max_norm": self.max_norm, "l2_norm": self.l2_norm,
                "gradient_floor": self.gradient_floor, "evaluable_cells": int(self.evaluable.sum())}


def pde_residual(field: ArrivalField, gradient_floor: Optional[float] = None) -> ResidualReport:
    """r = 1 + |grad u| div(grad u/|grad u|) where |grad u| exceeds the floor (default 10 h)."""
    floor = GRADIENT_FLOOR_FACTOR * field.spacing if gradient_floor is None else gradient_floor
    norm = field.grad_norm
    with np.errstate(invalid="ignore"):
        residual = 1.0 + norm * field.level_set_curvature
        evaluable = field.interior & np.isfinite(residual) & (norm > floor)
    vals = residual[evaluable]
    max_norm = float(np.max(np.abs(vals))) if vals.size else float("nan")
    l2 = float(np.sqrt(np.sum(vals ** 2) * field.spacing ** 2)) if vals.size else float("nan")
    return ResidualReport(values=np.where(evaluable, residual, np.nan), evaluable=evaluable,
                          max_norm=max_norm, l2_norm=l2, gradient_floor=floor)


@dataclass(frozen=True)
class CurvatureIdentityReport:
    """Level-set curvature against 1/|grad u| on the evaluable region."""

    max_relative_error: float
    median_relative_error: float


def curvature_identity(field: ArrivalField, gradient_floor: Optional[float] = None) -> CurvatureIdentityReport:
    report = pde_residual(field, gradient_floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_curv = -field.level_set_curvature[report.evaluable]
        target = 1.0 / field.grad_norm[report.evaluable]
        rel = np.abs(mean_curv - target) / target
    return CurvatureIdentityReport(max_relative_error=float(np.max(rel)) if rel.size else float("nan"),
                                   median_relative_error=float(np.median(rel)) if rel.size else float("nan"))


@dataclass(frozen=True)
class RatioCurve:
    """Binned |grad u|^2/(-u) against -u near one component of the critical set."""

    component: int
    bin_centers: np.ndarray
    means: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    counts: np.ndarray
    limit: float
    implied_k: float
    resolution_warning: bool
    two_sided_constant: float

    def rows(self) -> List[dict]:
        return [{"component": self.component, "minus_u": c, "ratio_mean": m, "ratio_min": lo,
                 "ratio_max": hi, "count": int(n)}
                for c, m, lo, hi, n in zip(self.bin_centers, self.means, self.lower, self.upper, self.counts)]

    def as_dict(self) -> dict:
        return {"component": self.component, "limit": self.limit, "implied_k": self.implied_k,
                "resolution_warning": self.resolution_warning,
                "two_sided_constant": self.two_sided_constant}


def lojasiewicz_ratio(field: ArrivalField, bins: int = 24, floor: Optional[float] = None,
                      localize: Optional[float] = None, fit_bins: int = 6,
                      critical: Optional["CriticalReport"] = None) -> List[RatioCurve]:
    """
    |grad u|^2/(-u) versus -u, one curve per connected component of the critical set.

    Cells closer than `floor` (default 4h^2 in -u) to the critical value are
    excluded; the limit is the intercept of a linear fit of the lowest
    `fit_bins` non-empty bins. Each component uses cells within distance
    `localize` (default 0.25 of the domain extent) of it.
    """
    h = field.spacing
    floor = 4.0 * h * h if floor is None else floor
    if critical is not None:
        labels = critical.labels
    else:
        try:
            labels = critical_analysis(field, hessian_method="stencil", strict=False).labels
        except BoundaryError:
            labels = np.zeros(field.mask.shape, dtype=int)
            top = np.nanargmax(np.where(field.mask, field.values, -np.inf))
            labels[np.unravel_index(top, labels.shape)] = 1
    extent = float(np.max(field.values.shape)) * h
    localize = 0.25 * extent if localize is None else localize
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = field.grad_norm ** 2 / (-field.values)
    usable = field.interior & np.isfinite(ratio) & (-field.values > floor)
    curves = []
    comps = range(1, int(labels.max()) + 1) if labels.max() > 0 else [0]
    for comp in comps:
        if comp == 0:
            near = np.ones_like(usable)
        else:
            dist = ndimage.distance_transform_edt(labels != comp) * h
            near = dist <= localize
        sel = usable & near
        mu, r = -field.values[sel], ratio[sel]
        if mu.size == 0:
            curves.append(RatioCurve(comp, np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, int),
                                     float("nan"), float("nan"), True, float("nan")))
            continue
        edges = np.geomspace(floor, mu.max() * (1.0 + 1e-12), bins + 1)
        which = np.clip(np.digitize(mu, edges) - 1, 0, bins - 1)
        counts = np.bincount(which, minlength=bins)
        sums = np.bincount(which, weights=r, minlength=bins)
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        lower = np.full(bins, np.nan)
        upper = np.full(bins, np.nan)
        for i in np.flatnonzero(counts):
            vals = r[which == i]
            lower[i], upper[i] = vals.min(), vals.max()
        centers = np.sqrt(edges[:-1] * edges[1:])
        filled = np.flatnonzero(counts > 0)
        warning = bool(np.any(counts[: max(fit_bins, 1)] == 0))
        if warning:
            logger.warning(f"⚠️ Empty ratio bins near the critical value (component {comp})")
        low = filled[:fit_bins]
        if low.size >= 2:
            model = LinearRegression().fit(centers[low, None], means[low], sample_weight=counts[low])
            limit = float(model.intercept_)
        else:
            limit = float(means[low[0]]) if low.size else float("nan")
        implied = field.n - 2.0 / limit if limit and np.isfinite(limit) else float("nan")
        two_sided = float(max(np.max(r), 1.0 / np.min(r))) if r.size else float("nan")
        curves.append(RatioCurve(comp, centers, means, lower, upper, counts, limit, implied, warning, two_sided))
        logger.info(f"📊 Lojasiewicz ratio limit {limit:.5f} (implied k = {implied:.3f}) on component {comp}")
    return curves


@dataclass
class CriticalPoint:
    index: Tuple[int, int]
    position: np.ndarray
    value: float
    gradient_norm: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    laplacian: float
    kernel_dimension: int


@dataclass
class CriticalReport:
    """Critical cells of u, their Hessian structure and the comparison with -Pi/(n-k)."""

    points: List[CriticalPoint]
    labels: np.ndarray
    k: int
    mixed_type: bool
    kernel_basis: np.ndarray
    eigenvalue_spread: float
    target_eigenvalue: float
    target_laplacian: float
    max_eigenvalue_error: float
    laplacian_error: float
    critical_value_bound_ok: bool
    hessian_method: str
    gradient_tolerance: float

    def as_dict(self) -> dict:
        best = self.points[0] if self.points else None
        return {
            "critical_points": len(self.points),
            "components": int(self.labels.max()),
            "k": self.k,
            "mixed_type": self.mixed_type,
            "eigenvalues": [] if best is None else best.eigenvalues.tolist(),
            "laplacian": None if best is None else best.laplacian,
            "target_eigenvalue": self.target_eigenvalue,
            "target_laplacian": self.target_laplacian,
            "max_eigenvalue_error": self.max_eigenvalue_error,
            "laplacian_error": self.laplacian_error,
            "eigenvalue_spread": self.eigenvalue_spread,
            "kernel_basis": self.kernel_basis.tolist(),
            "critical_value_bound_ok": self.critical_value_bound_ok,
            "hessian_method": self.hessian_method,
        }


def _quadratic_fit(field: ArrivalField, index: Tuple[int, int], radius: int = 3
                   ) -> Optional[Tuple[float, np.ndarray, np.ndarray]]:
    """Local least-squares quadratic over masked cells within `radius` cells."""
    i0, i1 = index
    sl = (slice(max(i0 - radius, 0), i0 + radius + 1), slice(max(i1 - radius, 0), i1 + radius + 1))
    pts = field.coordinates[sl][field.mask[sl]]
    vals = field.values[sl][field.mask[sl]]
    if len(vals) < 10:
        return None
    d = (pts - field.coordinates[index]) / field.spacing
    design = np.column_stack([np.ones(len(d)), d[:, 0], d[:, 1], 0.5 * d[:, 0] ** 2, d[:, 0] * d[:, 1],
                              0.5 * d[:, 1] ** 2])
    coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
    h = field.spacing
    grad = coef[1:3] / h
    block = np.array([[coef[3], coef[4]], [coef[4], coef[5]]]) / h ** 2
    return float(coef[0]), grad, block


def critical_analysis(field: ArrivalField, hessian_method: str = "stencil",
                      gradient_tolerance: Optional[float] = None, strict: bool = True) -> CriticalReport:
    """
    Critical cells (|grad u| below tolerance), Hessian eigen-structure at each, the
    kernel dimension k from the eigenvalue gap, and the deviation from
    Hess u = -Pi/(n-k), Delta u = -(n+1-k)/(n-k).

    `hessian_method` is "stencil" (centred differences; raises BoundaryError when
    the stencil leaves the mask) or "lsq" (local quadratic fit over masked cells).
    """
    h = field.spacing
    if hessian_method not in ("stencil", "lsq"):
        raise ValueError(f"unknown hessian method '{hessian_method}'")
    norm = field.grad_norm
    if gradient_tolerance is None:
        block = field.hessian_block[field.interior]
        scale = float(np.nanmedian(np.abs(block).max(axis=(-1, -2)))) if block.size else 1.0
        gradient_tolerance = 1.5 * h * max(scale, 1e-12)

    if hessian_method == "stencil":
        with np.errstate(invalid="ignore"):
            candidates = field.mask & np.isfinite(norm) & (norm < gradient_tolerance)
    else:
        top = field.mask & (field.values >= -32.0 * h * h)
        candidates = np.zeros_like(field.mask)
        for idx in zip(*np.nonzero(top)):
            fit = _quadratic_fit(field, idx)
            if fit is not None and np.linalg.norm(fit[1]) < gradient_tolerance:
                candidates[idx] = True
    if not candidates.any():
        # fall back to the maximum of u
        flat = np.nanargmax(np.where(field.mask, field.values, -np.inf))
        candidates = np.zeros_like(field.mask)
        candidates[np.unravel_index(flat, field.mask.shape)] = True
    labels, _ = ndimage.label(candidates, structure=np.ones((3, 3)))

    points: List[CriticalPoint] = []
    for idx in zip(*np.nonzero(candidates)):
        if hessian_method == "stencil":
            if not field.interior[idx]:
                if strict:
                    raise BoundaryError(f"Hessian stencil at cell {idx} leaves the field domain")
                continue
            grad, block = field.gradient[idx], field.hessian_block[idx]
            value = float(field.values[idx])
        else:
            fit = _quadratic_fit(field, idx)
            if fit is None:
                continue
            value, grad, block = fit
        hess = field.ambient_hessian(idx, grad=grad, block=block)
        eigvals, eigvecs = np.linalg.eigh(hess)
        points.append(CriticalPoint(index=tuple(int(i) for i in idx), position=field.coordinates[idx].copy(),
                                    value=value, gradient_norm=float(np.linalg.norm(grad)),
                                    eigenvalues=eigvals, eigenvectors=eigvecs,
                                    laplacian=float(np.trace(hess)), kernel_dimension=0))
    if not points:
        raise BoundaryError("no critical cell with a usable Hessian stencil")
    points.sort(key=lambda p: (-p.value, p.index))

    n = field.n
    kernel_dims = []
    for p in points:
        mags = np.abs(p.eigenvalues)
        reference = float(np.median(mags[mags >= 0.5 * mags.max()])) if mags.max() > 0 else 1.0
        p.kernel_dimension = int(np.sum(mags < KERNEL_THRESHOLD * reference))
        kernel_dims.append(p.kernel_dimension)
    best = points[0]
    k = best.kernel_dimension
    mixed = len(set(kernel_dims)) > 1
    if mixed:
        logger.warning(f"⚠️ Mixed kernel dimensions across the critical set: {sorted(set(kernel_dims))}")
    order = np.argsort(np.abs(best.eigenvalues))
    kernel_basis = best.eigenvectors[:, order[:k]].T
    nonzero = best.eigenvalues[order[k:]]
    target_eig = -1.0 / (n - k) if n > k else float("nan")
    target_lap = -(n + 1 - k) / (n - k) if n > k else float("nan")
    max_err = float(np.max(np.abs(nonzero - target_eig) / abs(target_eig))) if nonzero.size else float("nan")
    lap_err = float(abs(best.laplacian - target_lap) / abs(target_lap))
    spread = float(np.ptp(nonzero)) if nonzero.size else 0.0
    max_grad = float(np.nanmax(norm[field.interior])) if field.interior.any() else 0.0
    value_ok = all(abs(p.value) <= 3.0 * h * max_grad + 1e-12 for p in points)
    logger.info(f"📊 Critical analysis ({hessian_method}): {len(points)} cells, k = {k}, "
                f"eigenvalues {np.round(best.eigenvalues, 4).tolist()}, Laplacian {best.laplacian:.4f}")
    return CriticalReport(points=points, labels=labels, k=k, mixed_type=mixed, kernel_basis=kernel_basis,
                          eigenvalue_spread=spread, target_eigenvalue=target_eig, target_laplacian=target_lap,
                          max_eigenvalue_error=max_err, laplacian_error=lap_err,
                          critical_value_bound_ok=value_ok, hessian_method=hessian_method,
                          gradient_tolerance=gradient_tolerance)


def exponent_fit(samples: np.ndarray, mode: str = "gradient", min_samples: int = EXPONENT_MIN_SAMPLES,
                 min_decades: float = EXPONENT_MIN_DECADES) -> PowerLawFit:
    """
    Fit the exponent of a Lojasiewicz-type inequality from sample pairs.

    mode "gradient": pairs (|u - u(z)|, |grad u|), fitted as |u - u(z)| = C |grad u|^p.
    mode "distance": pairs (dist to Z, |f|), fitted as dist^alpha = C |f| on the lower
    envelope (for each decade bin of |f|, the largest distance), returning alpha.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise IllConditionedFitError("samples must be pairs")
    a, b = samples[:, 0], samples[:, 1]
    if mode == "gradient":
        return fit_power_law(b, a, min_samples=min_samples, min_decades=min_decades)
    if mode == "distance":
        keep = (a > 0) & (b > 0)
        dist, f = a[keep], b[keep]
        if dist.size < min_samples:
            raise IllConditionedFitError(f"need at least {min_samples} positive samples, got {dist.size}")
        edges = np.geomspace(f.min(), f.max() * (1.0 + 1e-12), max(min_samples // 2, 4) + 1)
        which = np.clip(np.digitize(f, edges) - 1, 0, len(edges) - 2)
        env_f, env_d = [], []
        for i in np.unique(which):
            sel = which == i
            j = np.argmax(dist[sel])
            env_f.append(f[sel][j])
            env_d.append(dist[sel][j])
        fit = fit_power_law(np.array(env_f), np.array(env_d), min_samples=3, min_decades=min_decades)
        # dist = C f^{1/alpha}
        alpha = 1.0 / fit.exponent
        lo, hi = fit.confidence_interval
        return PowerLawFit(exponent=alpha, constant=fit.constant ** (-alpha), stderr=fit.stderr * alpha ** 2,
                           confidence_interval=(1.0 / hi, 1.0 / lo) if lo > 0 else (float("nan"), float("nan")),
                           r_squared=fit.r_squared, n_samples=int(dist.size), decades=fit.decades)
    raise ValueError(f"unknown exponent mode '{mode}'")


def gradient_samples(field: ArrivalField, critical: Optional[CriticalReport] = None,
                     radius: Optional[float] = None) -> np.ndarray:
    """(|u - u(z)|, |grad u|) pairs around the leading critical point."""
    critical = critical or critical_analysis(field, strict=False)
    z = critical.points[0]
    coords = field.coordinates
    dist = np.linalg.norm(coords - z.position, axis=-1)
    radius = 0.5 * float(np.max(dist[field.mask])) if radius is None else radius
    sel = field.interior & (dist <= radius) & (dist > 0) & np.isfinite(field.grad_norm)
    return np.column_stack([np.abs(field.values[sel] - z.value), field.grad_norm[sel]])


def synthetic_degenerate_samples(m: int, count: int = 200, decades: float = 4.0,
                                 constant: float = 1.0) -> np.ndarray:
    """Pairs with |u - u(y)| = C |grad u|^{m/(m-1)} for probing non-C^2 behaviour."""
    if m < 2:
        raise ValueError("m must be at least 2")
    grad = np.logspace(-decades, 0.0, count)
    return np.column_stack([constant * grad ** (m / (m - 1.0)), grad])


"""
Discrete hypersurfaces and their differential geometry.

Three representations are supported:

* ``plane_curve`` -- a closed counter-clockwise polygon in R^2 (n = 1);
* ``profile_of_revolution`` -- a meridian curve (x, r(x)) of a hypersurface of
  revolution {(x, r w) : w in S^{n-1}} in R^{n+1}, rotated about the x-axis;
* ``levelset_isosurface`` -- edge crossings of a gridded function.

Curves and profiles share one three-point stencil: the curvature at a sample is
the Menger curvature of the sample and its two neighbours, the tangent is the
centred chord. Profile ends are closed with ghost samples (reflection across the
axis for capped ends, across the end plane for free ends, translation by the
period for periodic profiles).
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import expm
from scipy.ndimage import map_coordinates
from scipy.optimize import least_squares

from src.utils.errors import GeometryError, GraphFailureError, StencilError
from src.utils.quadrature import gaussian_weight, segment_rule, sphere_area, sphere_rule

logger = logging.getLogger(__name__)

SURFACE_KINDS = ("plane_curve", "profile_of_revolution", "levelset_isosurface")
PROFILE_ENDS = ("capped", "periodic", "free")

DEFAULT_TRUNCATION_RADIUS = 12.0
MIN_CURVE_SAMPLES = 16
GRAPH_SLOPE_FLOOR = 0.2


# --------------------------------------------------------------------------------------
# quadrature descriptor
# --------------------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianQuadrature:
    """
    Quadrature for integrals against e^{-|x|^2/4}.

    Curves and profiles are integrated segment by segment on a cubic spline
    through the samples with `nodes_per_segment` Gauss-Legendre nodes; the
    rotational factor of a profile uses a sphere rule exact to `sphere_degree`.
    Mass outside the ball of radius `truncation_radius` is discarded and bounded
    by e^{-R^2/4} times the measure of the discarded part.
    """

    truncation_radius: float = DEFAULT_TRUNCATION_RADIUS
    nodes_per_segment: int = 6
    sphere_degree: int = 12
    tail_tolerance: float = 1e-12

    def tail_bound(self, outside_measure: float) -> float:
        return float(np.exp(-self.truncation_radius ** 2 / 4.0) * outside_measure)

    def integrate_sphere(self, func, n: int, radius: float = 1.0) -> float:
        """Integral of func over the sphere of given radius in R^n (exact to sphere_degree)."""
        nodes, weights = sphere_rule(n, self.sphere_degree)
        values = np.asarray(func(radius * nodes), dtype=float)
        return float(radius ** (n - 1) * weights @ values)


@dataclass(frozen=True)
class AreaReport:
    """Gaussian area with its discarded-tail estimate."""

    value: float
    tail_bound: float
    outside_measure: float
    tail_warning: bool

    def as_dict(self) -> dict:
        return {"gaussian_area": self.value, "tail_bound": self.tail_bound,
                "outside_measure": self.outside_measure, "tail_warning": self.tail_warning}


# --------------------------------------------------------------------------------------
# surfaces
# --------------------------------------------------------------------------------------

@dataclass(frozen=True)
class LevelSetData:
    """Gridded function whose `level` set is the surface; the interior is {values < level}."""

    values: np.ndarray
    spacing: float
    origin: np.ndarray
    level: float = 0.0

    def grid_coordinates(self, points: np.ndarray) -> np.ndarray:
        return ((np.atleast_2d(points) - self.origin) / self.spacing).T

    @cached_property
    def gradient(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.gradient(self.values, self.spacing, edge_order=2))

    @cached_property
    def curvature(self) -> np.ndarray:
        grads = self.gradient
        norm = np.sqrt(sum(g ** 2 for g in grads))
        norm = np.where(norm > 1e-12, norm, 1e-12)
        return sum(np.gradient(g / norm, self.spacing, axis=i, edge_order=2)
                   for i, g in enumerate(grads))

    def interpolate(self, grid: np.ndarray, points: np.ndarray) -> np.ndarray:
        return map_coordinates(grid, self.grid_coordinates(points), order=1, mode="nearest")


@dataclass(frozen=True)
class CurveGeometry:
    """Per-sample stencil quantities of a curve or profile (meridian coordinates)."""

    tangent: np.ndarray
    normal: np.ndarray
    curvature: np.ndarray
    mean_curvature: np.ndarray
    support: np.ndarray
    spacing: np.ndarray


def _cross(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]


def _star_shaped(points: np.ndarray) -> bool:
    """Polar angle about the centroid strictly increasing once around: sufficient for a simple curve."""
    rel = points - points.mean(axis=0)
    if np.any(np.linalg.norm(rel, axis=1) == 0.0):
        return False
    angles = np.arctan2(rel[:, 1], rel[:, 0])
    turns = (np.diff(np.append(angles, angles[0])) + np.pi) % (2.0 * np.pi) - np.pi
    return bool(np.all(turns > 0.0) and abs(np.sum(turns) - 2.0 * np.pi) < 1e-9)


def first_crossing(points: np.ndarray, chunk: int = 256) -> Optional[Tuple[int, int]]:
    """
    First pair (i, j), i < j, of non-adjacent edges of the closed polygon through
    `points` that cross, or None for a simple polygon. Parallel edges are skipped.
    """
    n = len(points)
    edges = np.roll(points, -1, axis=0) - points
    idx = np.arange(n)
    for lo in range(0, n, chunk):
        rows = idx[lo:lo + chunk]
        a, d = points[rows][:, None, :], edges[rows][:, None, :]
        rel = points[None, :, :] - a
        with np.errstate(divide="ignore", invalid="ignore"):
            denom = _cross(d, edges[None, :, :])
            t = _cross(rel, edges[None, :, :]) / denom
            u = _cross(rel, d) / denom
        gap = (idx[None, :] - rows[:, None]) % n
        hits = (gap > 1) & (gap < n - 1) & (idx[None, :] > rows[:, None]) & (denom != 0.0) \
            & (t > 0.0) & (t < 1.0) & (u > 0.0) & (u < 1.0)
        if hits.any():
            r, c = np.argwhere(hits)[0]
            return int(rows[r]), int(c)
    return None


@dataclass(frozen=True, eq=False)
class Surface:
    """
    Discretized hypersurface.

    `samples` holds ordered points of a closed plane curve (N, 2), meridian pairs
    (x, r) of a profile (N, 2), or crossing points of a level set (N, n+1).
    `frame` is an optional rotation of R^{n+1} applied to the embedding; all
    intrinsic quantities (H, phi, Gaussian area) are invariant under it.
    """

    kind: str
    ambient_dimension: int
    samples: np.ndarray
    outward: bool = True
    ends: str = "closed"
    period: float = 0.0
    frame: Optional[np.ndarray] = None
    mean_convex: bool = False
    time: float = 0.0
    levelset: Optional[LevelSetData] = field(default=None, repr=False)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        if self.kind not in SURFACE_KINDS:
            raise GeometryError(f"unknown surface kind '{self.kind}'")
        if self.kind == "plane_curve":
            self._validate_plane_curve()
        elif self.kind == "profile_of_revolution":
            self._validate_profile()
        elif self.levelset is None:
            raise GeometryError("levelset_isosurface requires level-set data")
        if self.frame is not None:
            frame = np.asarray(self.frame, dtype=float)
            if frame.shape != (self.ambient_dimension,) * 2 or \
                    not np.allclose(frame.T @ frame, np.eye(self.ambient_dimension), atol=1e-10):
                raise GeometryError("frame must be an orthogonal matrix of the ambient dimension")
            object.__setattr__(self, "frame", frame)
        if self.mean_convex:
            h = self.mean_curvatures
            if np.any(h <= 0.0):
                bad = int(np.argmin(h))
                raise GeometryError(f"mean convexity violated at sample {bad} (H = {h[bad]:.4g})")

    def _validate_plane_curve(self):
        if self.ambient_dimension != 2 or self.samples.ndim != 2 or self.samples.shape[1] != 2:
            raise GeometryError("plane curves live in R^2 with samples of shape (N, 2)")
        if len(self.samples) < MIN_CURVE_SAMPLES:
            raise GeometryError(f"plane curves need at least {MIN_CURVE_SAMPLES} samples")
        if self.ends != "closed":
            raise GeometryError("plane curves are closed")
        if self.signed_area <= 0.0:
            raise GeometryError("plane curves must be ordered counter-clockwise")
        if not _star_shaped(self.samples):
            crossing = first_crossing(self.samples)
            if crossing is not None:
                raise GeometryError(f"plane curve is not simple: edges {crossing[0]} and {crossing[1]} cross")

    def _validate_profile(self):
        if self.samples.ndim != 2 or self.samples.shape[1] != 2:
            raise GeometryError("profile samples are (x, r) pairs")
        if self.ambient_dimension < 2:
            raise GeometryError("profiles need ambient dimension >= 2")
        if self.ends not in PROFILE_ENDS:
            raise GeometryError(f"profile ends must be one of {PROFILE_ENDS}")
        r = self.samples[:, 1]
        if self.ends == "capped":
            if abs(r[0]) > 1e-12 or abs(r[-1]) > 1e-12:
                raise GeometryError("capped profiles must start and end on the axis")
            interior = r[1:-1]
        else:
            interior = r
        if np.any(interior <= 0.0):
            raise GeometryError("profile radius must be positive away from the caps")
        if self.ends == "periodic" and self.period <= 0.0:
            raise GeometryError("periodic profiles need a positive period")

    # basic attributes ---------------------------------------------------------------

    @property
    def n(self) -> int:
        """Dimension of the hypersurface."""
        return self.ambient_dimension - 1

    @property
    def size(self) -> int:
        return len(self.samples)

    @property
    def signed_area(self) -> float:
        x, y = self.samples[:, 0], self.samples[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def orientation_sign(self) -> float:
        # closed curves run counter-clockwise, profiles run left to right over the top
        sign = 1.0 if self.kind == "plane_curve" else -1.0
        return sign if self.outward else -sign

    def with_samples(self, samples: np.ndarray, time: Optional[float] = None) -> "Surface":
        return replace(self, samples=samples, time=self.time if time is None else time)

    def rotated(self, rotation: np.ndarray) -> "Surface":
        rotation = np.asarray(rotation, dtype=float)
        frame = rotation if self.frame is None else rotation @ self.frame
        return replace(self, frame=frame)

    # stencils -----------------------------------------------------------------------

    def neighbours(self) -> Tuple[np.ndarray, np.ndarray]:
        p = self.samples
        if self.kind == "plane_curve":
            return np.roll(p, 1, axis=0), np.roll(p, -1, axis=0)
        prev = np.empty_like(p)
        nxt = np.empty_like(p)
        prev[1:] = p[:-1]
        nxt[:-1] = p[1:]
        if self.ends == "capped":
            prev[0] = (p[1, 0], -p[1, 1])
            nxt[-1] = (p[-2, 0], -p[-2, 1])
        elif self.ends == "free":
            prev[0] = (2.0 * p[0, 0] - p[1, 0], p[1, 1])
            nxt[-1] = (2.0 * p[-1, 0] - p[-2, 0], p[-2, 1])
        else:
            prev[0] = p[-1] - (self.period, 0.0)
            nxt[-1] = p[0] + (self.period, 0.0)
        return prev, nxt

    @cached_property
    def geometry(self) -> CurveGeometry:
        if self.kind == "levelset_isosurface":
            raise GeometryError("stencil geometry is defined for curves and profiles only")
        p = self.samples
        prev, nxt = self.neighbours()
        a, b, c = p - prev, nxt - p, nxt - prev
        la, lb, lc = (np.linalg.norm(v, axis=1) for v in (a, b, c))
        scale = max(float(np.max(lb)), 1e-300)
        degenerate = np.flatnonzero((la <= 1e-13 * scale) | (lb <= 1e-13 * scale) | (lc <= 1e-13 * scale))
        if degenerate.size:
            raise StencilError(f"coincident samples around index {int(degenerate[0])}")

        cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        sign = self.orientation_sign
        kappa = sign * 2.0 * cross / (la * lb * lc)
        tangent = c / lc[:, None]
        normal = sign * np.column_stack([tangent[:, 1], -tangent[:, 0]])

        if self.kind == "plane_curve":
            mean_curv = kappa
        else:
            r = p[:, 1]
            on_axis = r <= 0.0
            safe_r = np.where(on_axis, 1.0, r)
            mean_curv = np.where(on_axis, self.n * kappa,
                                 kappa + (self.n - 1) * normal[:, 1] / safe_r)
        support = np.einsum("ij,ij->i", p, normal)
        return CurveGeometry(tangent=tangent, normal=normal, curvature=kappa,
                             mean_curvature=mean_curv, support=support, spacing=0.5 * (la + lb))

    @cached_property
    def mean_curvatures(self) -> np.ndarray:
        if self.kind == "levelset_isosurface":
            ls = self.levelset
            return ls.interpolate(ls.curvature, self.samples)
        return self.geometry.mean_curvature

    @cached_property
    def normals(self) -> np.ndarray:
        """Unit normals in sample coordinates (meridian plane for profiles)."""
        if self.kind == "levelset_isosurface":
            ls = self.levelset
            g = np.column_stack([ls.interpolate(gi, self.samples) for gi in ls.gradient])
            g /= np.maximum(np.linalg.norm(g, axis=1), 1e-300)[:, None]
            return g if self.outward else -g
        return self.geometry.normal

    @cached_property
    def support(self) -> np.ndarray:
        """<x, n> per sample; invariant under the frame rotation."""
        if self.kind == "levelset_isosurface":
            return np.einsum("ij,ij->i", self.samples, self.normals)
        return self.geometry.support

    @property
    def min_spacing(self) -> float:
        if self.kind == "levelset_isosurface":
            return float(self.levelset.spacing)
        return float(np.min(self.geometry.spacing))

    def arclength(self) -> np.ndarray:
        """Cumulative chord length along the samples, starting at 0."""
        seg = np.linalg.norm(np.diff(self.samples, axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def total_length(self) -> float:
        s = self.arclength()
        if self.kind == "plane_curve":
            return float(s[-1] + np.linalg.norm(self.samples[0] - self.samples[-1]))
        if self.ends == "periodic":
            return float(s[-1] + np.linalg.norm(self.samples[0] + (self.period, 0.0) - self.samples[-1]))
        return float(s[-1])

    def embed(self, points: np.ndarray, directions: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Map sample-space points into R^{n+1}. Profile points (x, r) need unit
        directions w in S^{n-1}; without them the meridian e_2 is used.
        """
        points = np.atleast_2d(points)
        if self.kind == "profile_of_revolution":
            if directions is None:
                directions = np.zeros((len(points), self.n))
                directions[:, 0] = 1.0
            points = np.column_stack([points[:, 0], points[:, 1:2] * directions])
        if self.frame is not None:
            points = points @ self.frame.T
        return points

    # splines and quadrature -----------------------------------------------------------

    def _padded(self, pad: int = 3) -> Tuple[np.ndarray, int]:
        p = self.samples
        pad = min(pad, len(p) - 1)
        if self.ends == "capped":
            head = p[pad:0:-1] * (1.0, -1.0)
            tail = p[-2:-2 - pad:-1] * (1.0, -1.0)
        elif self.ends == "free":
            head = np.column_stack([2.0 * p[0, 0] - p[pad:0:-1, 0], p[pad:0:-1, 1]])
            tail = np.column_stack([2.0 * p[-1, 0] - p[-2:-2 - pad:-1, 0], p[-2:-2 - pad:-1, 1]])
        else:
            head = p[-pad:] - (self.period, 0.0)
            tail = p[:pad + 1] + (self.period, 0.0)
        return np.vstack([head, p, tail]), pad

    @cached_property
    def spline(self) -> Tuple[CubicSpline, np.ndarray]:
        """
        Cubic spline through the samples parametrized by chord length, with the
        knot parameters of the samples that bound the surface proper.
        """
        if self.kind == "plane_curve":
            closed = np.vstack([self.samples, self.samples[:1]])
            sigma = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(closed, axis=0), axis=1))])
            return CubicSpline(sigma, closed, bc_type="periodic"), sigma
        if self.kind != "profile_of_revolution":
            raise GeometryError("splines are defined for curves and profiles only")
        padded, pad = self._padded()
        sigma = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(padded, axis=0), axis=1))])
        spline = CubicSpline(sigma, padded)
        last = pad + len(self.samples) - 1
        if self.ends == "periodic":
            last += 1
        return spline, sigma[pad:last + 1]

    def quadrature_nodes(self, nodes_per_segment: int = 6) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Gauss-Legendre nodes along the curve / meridian.

        Returns:
            (points, line_weights, unit_tangents) in sample coordinates
        """
        spline, knots = self.spline
        t, w = segment_rule(nodes_per_segment)
        lengths = np.diff(knots)
        sigma = (knots[:-1, None] + lengths[:, None] * t[None, :]).ravel()
        weights = (lengths[:, None] * w[None, :]).ravel()
        points = spline(sigma)
        deriv = spline(sigma, 1)
        speed = np.linalg.norm(deriv, axis=1)
        return points, weights * speed, deriv / speed[:, None]

    def resampled(self, count: Optional[int] = None, spacing: Optional[float] = None) -> "Surface":
        """Arclength resampling on the spline through the samples."""
        if self.kind == "levelset_isosurface":
            raise GeometryError("level-set surfaces are not resampled")
        spline, knots = self.spline
        fine = 8
        t = np.linspace(0.0, 1.0, fine + 1)[:-1]
        sigma = np.concatenate([(knots[:-1, None] + np.diff(knots)[:, None] * t[None, :]).ravel(),
                                knots[-1:]])
        pts = spline(sigma)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        total = arc[-1]
        if count is None:
            if spacing is None:
                count = self.size
            else:
                count = int(np.ceil(total / spacing))
                if self.ends == "capped" or self.ends == "free":
                    count += 1
        if self.kind == "plane_curve":
            count = max(count, MIN_CURVE_SAMPLES)
            targets = total * np.arange(count) / count
        elif self.ends == "periodic":
            count = max(count, 4)
            targets = total * np.arange(count) / count
        else:
            count = max(count, 5)
            targets = np.linspace(0.0, total, count)
        new_sigma = np.interp(targets, arc, sigma)
        samples = spline(new_sigma)
        if self.ends == "capped":
            samples[0, 1] = 0.0
            samples[-1, 1] = 0.0
        return self.with_samples(samples)

    def gaussian_cloud(self, quad: Optional[GaussianQuadrature] = None) -> "GaussianCloud":
        """Weighted point cloud of the embedded surface: nodes x_i, weights dA_i e^{-|x_i|^2/4}."""
        quad = quad or GaussianQuadrature()
        if self.kind == "levelset_isosurface":
            return _levelset_cloud(self, quad)
        pts, dl, tan = self.quadrature_nodes(quad.nodes_per_segment)
        sign = self.orientation_sign
        nrm = sign * np.column_stack([tan[:, 1], -tan[:, 0]])
        if self.kind == "plane_curve":
            points, normals, area = pts, nrm, dl
            profile_index = np.arange(len(pts))
        else:
            if self.ends == "periodic":
                pts, dl, nrm = _tile_period(pts, dl, nrm, self.period, quad.truncation_radius)
            omega, w_omega = sphere_rule(self.n, quad.sphere_degree)
            m = len(omega)
            r = pts[:, 1:2]
            points = np.column_stack([np.repeat(pts[:, 0], m),
                                      (r[:, None, :] * omega[None, :, :]).reshape(-1, self.n)])
            normals = np.column_stack([np.repeat(nrm[:, 0], m),
                                       (nrm[:, 1:2, None] * omega[None, :, :]).reshape(-1, self.n)])
            area = (dl[:, None] * np.abs(r) ** (self.n - 1) * w_omega[None, :]).ravel()
            profile_index = np.repeat(np.arange(len(pts)), m)
        if self.frame is not None:
            points = points @ self.frame.T
            normals = normals @ self.frame.T
        inside = np.linalg.norm(points, axis=1) <= quad.truncation_radius
        return GaussianCloud(points=points, normals=normals, area=area,
                             weights=area * gaussian_weight(points) * inside, inside=inside,
                             profile_index=profile_index)


@dataclass(frozen=True)
class GaussianCloud:
    """Quadrature nodes of an embedded surface with Gaussian-weighted area elements."""

    points: np.ndarray
    normals: np.ndarray
    area: np.ndarray
    weights: np.ndarray
    inside: np.ndarray
    profile_index: np.ndarray


def _tile_period(pts, dl, nrm, period, radius):
    reps = int(np.ceil((radius + period) / period)) + 1
    shifts = period * np.arange(-reps, reps + 1)
    pts = np.concatenate([pts + (s, 0.0) for s in shifts])
    return pts, np.tile(dl, len(shifts)), np.tile(nrm, (len(shifts), 1))


def _levelset_cloud(surface: Surface, quad: GaussianQuadrature) -> GaussianCloud:
    ls = surface.levelset
    grads = ls.gradient
    gnorm = np.sqrt(sum(g ** 2 for g in grads))
    dist = (ls.values - ls.level) / np.maximum(gnorm, 1e-12)
    eps = 1.5 * ls.spacing
    band = np.abs(dist) < eps
    idx = np.argwhere(band)
    points = ls.origin + idx * ls.spacing
    delta = (1.0 + np.cos(np.pi * dist[band] / eps)) / (2.0 * eps)
    area = delta * ls.spacing ** ls.values.ndim
    normals = np.column_stack([g[band] for g in grads]) / np.maximum(gnorm[band], 1e-12)[:, None]
    if not surface.outward:
        normals = -normals
    inside = np.linalg.norm(points, axis=1) <= quad.truncation_radius
    return GaussianCloud(points=points, normals=normals, area=area,
                         weights=area * gaussian_weight(points) * inside, inside=inside,
                         profile_index=np.arange(len(points)))


def surface_from_levelset(values: np.ndarray, spacing: float, origin, level: float = 0.0,
                          outward: bool = True) -> Surface:
    """Isosurface {values = level} of a gridded function; samples are grid-edge crossings."""
    values = np.asarray(values, dtype=float)
    origin = np.asarray(origin, dtype=float)
    data = LevelSetData(values=values, spacing=float(spacing), origin=origin, level=float(level))
    shifted = values - level
    crossings = []
    for axis in range(values.ndim):
        lo = [slice(None)] * values.ndim
        hi = [slice(None)] * values.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        a, b = shifted[tuple(lo)], shifted[tuple(hi)]
        mask = (a * b) < 0.0
        idx = np.argwhere(mask).astype(float)
        frac = a[mask] / (a[mask] - b[mask])
        idx[:, axis] += frac
        crossings.append(origin + idx * spacing)
    samples = np.concatenate(crossings) if crossings else np.zeros((0, values.ndim))
    if len(samples) == 0:
        raise GeometryError(f"level {level} does not cross the grid")
    return Surface(kind="levelset_isosurface", ambient_dimension=values.ndim, samples=samples,
                   outward=outward, ends="closed", levelset=data)


# --------------------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------------------

def mean_curvature(surface: Surface, index: int) -> float:
    """Mean curvature at one sample; H > 0 on spheres with the outward normal."""
    if not 0 <= index < surface.size:
        raise StencilError(f"sample {index} outside 0..{surface.size - 1}")
    return float(surface.mean_curvatures[index])


@dataclass(frozen=True)
class ResidualField:
    values: np.ndarray
    max_norm: float


def shrinker_residual(surface: Surface) -> ResidualField:
    """phi = H - <x, n>/2 per sample; phi = 0 exactly on shrinkers."""
    phi = surface.mean_curvatures - 0.5 * surface.support
    return ResidualField(values=phi, max_norm=float(np.max(np.abs(phi))))


def rescaled_speed(surface: Surface) -> np.ndarray:
    """Normal speed of rescaled MCF, -phi; shares the code path of shrinker_residual."""
    return -shrinker_residual(surface).values


def gaussian_area(surface: Surface, quad: Optional[GaussianQuadrature] = None) -> AreaReport:
    """F(Sigma) = integral of e^{-|x|^2/4} over the surface, with the discarded tail bounded."""
    quad = quad or GaussianQuadrature()
    cloud = surface.gaussian_cloud(quad)
    # sphere-rule weights already carry |S^{n-1}|
    value = float(np.sum(cloud.weights))
    outside = float(np.sum(cloud.area[~cloud.inside]))
    if surface.kind == "profile_of_revolution" and surface.ends == "periodic":
        r_max = float(np.max(surface.samples[:, 1]))
        outside += sphere_area(surface.n) * r_max ** (surface.n - 1) * 4.0 / quad.truncation_radius
    tail = quad.tail_bound(outside)
    warning = tail > quad.tail_tolerance
    if warning:
        logger.warning(f"⚠️ Gaussian area tail bound {tail:.3e} exceeds {quad.tail_tolerance:.1e}")
    return AreaReport(value=value, tail_bound=tail, outside_measure=outside, tail_warning=warning)


# --------------------------------------------------------------------------------------
# cylinders
# --------------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShrinkerCylinder:
    """S^{n-k}_{sqrt(2(n-k))} x R^k with centre and orthonormal axis frame (n+1, k)."""

    n: int
    k: int
    center: np.ndarray
    axis_frame: np.ndarray

    def __post_init__(self):
        if not 0 <= self.k <= self.n - 1:
            raise GeometryError(f"cylinder needs 0 <= k <= n-1, got n={self.n}, k={self.k}")
        center = np.asarray(self.center, dtype=float).reshape(self.n + 1)
        axes = np.asarray(self.axis_frame, dtype=float).reshape(self.n + 1, self.k)
        if self.k and not np.allclose(axes.T @ axes, np.eye(self.k), atol=1e-12, rtol=0.0):
            raise GeometryError("axis frame is not orthonormal to 1e-12")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "axis_frame", axes)

    @classmethod
    def standard(cls, n: int, k: int) -> "ShrinkerCylinder":
        return cls(n=n, k=k, center=np.zeros(n + 1), axis_frame=np.eye(n + 1)[:, :k])

    @property
    def radius(self) -> float:
        return float(np.sqrt(2.0 * (self.n - self.k)))

    @property
    def mean_curvature(self) -> float:
        return float(np.sqrt((self.n - self.k) / 2.0))

    @property
    def axis_projection(self) -> np.ndarray:
        """Pi_axis: orthogonal projection onto the axis."""
        return self.axis_frame @ self.axis_frame.T

    @property
    def orthogonal_projection(self) -> np.ndarray:
        """Pi: orthogonal projection onto the complement of the axis."""
        return np.eye(self.n + 1) - self.axis_projection

    @cached_property
    def complement_frame(self) -> np.ndarray:
        """Orthonormal basis (n+1, n-k+1) of the cross-section directions."""
        if self.k == 0:
            return np.eye(self.n + 1)
        q, _ = np.linalg.qr(np.column_stack([self.axis_frame, np.eye(self.n + 1)]))
        basis = q[:, self.k:self.n + 1]
        # keep standard axes when the axis frame is standard
        for j in range(basis.shape[1]):
            pivot = np.argmax(np.abs(basis[:, j]))
            if basis[pivot, j] < 0:
                basis[:, j] = -basis[:, j]
        return basis

    def local_coordinates(self, points: np.ndarray) -> np.ndarray:
        """(y, theta): axis coordinates followed by cross-section coordinates."""
        rel = np.atleast_2d(points) - self.center
        return np.column_stack([rel @ self.axis_frame, rel @ self.complement_frame])

    def from_local(self, local: np.ndarray) -> np.ndarray:
        local = np.atleast_2d(local)
        return self.center + local[:, :self.k] @ self.axis_frame.T + local[:, self.k:] @ self.complement_frame.T

    def radial_distance(self, points: np.ndarray) -> np.ndarray:
        rel = np.atleast_2d(points) - self.center
        return np.linalg.norm(rel @ self.orthogonal_projection, axis=1)


@dataclass(frozen=True)
class CylinderFit:
    """Result of fit_cylinder: model cylinder, graph function on the cloud and its norms."""

    cylinder: ShrinkerCylinder
    w: np.ndarray
    cloud: GaussianCloud
    norms: Dict[str, float]
    measured_radius: float
    graphical_radius: float
    iterations: int

    def as_dict(self) -> dict:
        return {
            "n": self.cylinder.n,
            "k": self.cylinder.k,
            "center": self.cylinder.center.tolist(),
            "axis_frame": self.cylinder.axis_frame.tolist(),
            "radius": self.cylinder.radius,
            "measured_radius": self.measured_radius,
            "graphical_radius": self.graphical_radius,
            "norms": dict(self.norms),
            "iterations": self.iterations,
        }


def _inertia_frame(points: np.ndarray, weights: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    total = float(np.sum(weights))
    if total <= 0.0:
        raise GeometryError("surface carries no Gaussian mass inside the truncation ball")
    centroid = weights @ points / total
    rel = points - centroid
    inertia = (rel * weights[:, None]).T @ rel / total
    _, vecs = np.linalg.eigh(inertia)
    # largest spread first: axis directions, then the cross-section
    frame = vecs[:, ::-1]
    return centroid, frame


def fit_cylinder(surface: Surface, k: int, quad: Optional[GaussianQuadrature] = None,
                 graph_radius: Optional[float] = None,
                 slope_floor: float = GRAPH_SLOPE_FLOOR) -> CylinderFit:
    """
    Gaussian-L^2 closest cylinder S^{n-k}_{sqrt(2(n-k))} x R^k to the surface.

    The centre and axis start from the inertia tensor of the Gaussian-weighted
    surface measure; a trust-region least-squares refinement then moves the centre
    orthogonally to the axis and rotates the axis, with all parameters expressed
    in the inertia frame. The graph function is measured along the inward normal
    of the cylinder, w = rho - |Pi(x - c)|.

    Args:
        surface: surface to fit
        k: axis dimension
        quad: quadrature for the Gaussian measure
        graph_radius: radius of the ball inside which the surface must be graphical
            (defaults to 2n)
        slope_floor: minimum of <n_Sigma, e_r> accepted as graphical

    Returns:
        CylinderFit
    """
    n = surface.n
    if not 0 <= k <= n - 1:
        raise GeometryError(f"cylinder needs 0 <= k <= n-1, got n={n}, k={k}")
    quad = quad or GaussianQuadrature()
    graph_radius = 2.0 * n if graph_radius is None else graph_radius
    cloud = surface.gaussian_cloud(quad)
    active = cloud.weights > 0.0
    pts, wts = cloud.points[active], cloud.weights[active]
    rho = float(np.sqrt(2.0 * (n - k)))
    centroid, frame0 = _inertia_frame(pts, wts, k)
    m = n + 1 - k
    sqrt_w = np.sqrt(wts)

    def unpack(params):
        offset = params[:m]
        skew = np.zeros((n + 1, n + 1))
        if k:
            block = params[m:].reshape(k, m)
            skew[:k, k:] = block
            skew[k:, :k] = -block.T
        frame = frame0 @ expm(skew)
        center = centroid + frame0[:, k:] @ offset
        return center, frame

    def residuals(params):
        center, frame = unpack(params)
        rel = pts - center
        axial = rel @ frame[:, :k]
        radial = np.sqrt(np.maximum(np.einsum("ij,ij->i", rel, rel) - np.einsum("ij,ij->i", axial, axial), 0.0))
        return sqrt_w * (rho - radial)

    x0 = np.zeros(m + k * m)
    result = least_squares(residuals, x0, method="trf", x_scale="jac",
                           xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    center, frame = unpack(result.x)
    q, _ = np.linalg.qr(frame[:, :k]) if k else (np.zeros((n + 1, 0)), None)
    # QR may flip signs; keep the orientation of the optimized frame
    if k:
        q = q * np.sign(np.sum(q * frame[:, :k], axis=0))
    cylinder = ShrinkerCylinder(n=n, k=k, center=center, axis_frame=q)

    radial_dist = cylinder.radial_distance(cloud.points)
    w = rho - radial_dist
    rel = cloud.points - center
    radial_dir = (rel @ cylinder.orthogonal_projection) / np.maximum(radial_dist, 1e-300)[:, None]
    slope = np.einsum("ij,ij->i", cloud.normals, radial_dir)
    failing = np.flatnonzero((slope < slope_floor) | (radial_dist <= 1e-12))
    norms_from_origin = np.linalg.norm(cloud.points, axis=1)
    graphical_radius = float(quad.truncation_radius)
    if failing.size:
        first = failing[np.argmin(norms_from_origin[failing])]
        graphical_radius = float(norms_from_origin[first])
        if graphical_radius < graph_radius:
            raise GraphFailureError(
                f"surface is not graphical over the fitted cylinder at |x| = {graphical_radius:.4g}",
                sample_index=int(cloud.profile_index[first]), point=cloud.points[first])

    ball = norms_from_origin <= graph_radius
    mass = cloud.weights[ball]
    measured_radius = float(mass @ radial_dist[ball] / max(mass.sum(), 1e-300))
    norms = _graph_norms(surface, cloud, w)
    logger.debug(f"cylinder fit n={n} k={k}: |w|_L2={norms['L2']:.3e}, "
                 f"measured radius {measured_radius:.6f}")
    return CylinderFit(cylinder=cylinder, w=w, cloud=cloud, norms=norms,
                       measured_radius=measured_radius, graphical_radius=graphical_radius,
                       iterations=int(result.nfev))


def _graph_norms(surface: Surface, cloud: GaussianCloud, w: np.ndarray) -> Dict[str, float]:
    """Gaussian Sobolev norms of w; derivatives are taken along the curve / meridian."""
    weights = cloud.weights
    norms = {"L2": float(np.sqrt(weights @ w ** 2))}
    if surface.kind == "levelset_isosurface":
        norms.update({"W1_2": float("nan"), "W2_2": float("nan"), "W3_2": float("nan")})
        return norms
    n_line = int(cloud.profile_index.max()) + 1
    per_line = len(w) // n_line
    grid_w = w.reshape(n_line, per_line)
    grid_weights = weights.reshape(n_line, per_line)
    along = cloud.points.reshape(n_line, per_line, -1)[:, 0, :]
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(along, axis=0), axis=1))])
    keep = np.concatenate([[True], np.diff(s) > 1e-14])
    s, grid_w, grid_weights = s[keep], grid_w[keep], grid_weights[keep]
    total = float(np.sum(grid_weights * grid_w ** 2))
    deriv = grid_w
    for order in (1, 2, 3):
        deriv = np.gradient(deriv, s, axis=0, edge_order=2) if len(s) > 2 else np.zeros_like(deriv)
        total += float(np.sum(grid_weights * deriv ** 2))
        norms[f"W{order}_2"] = float(np.sqrt(total))
    return norms

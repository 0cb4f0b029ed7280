"""Builders for the initial surfaces used by scenarios and tests."""

import logging
from typing import Callable, Optional

import numpy as np

from src.services.geometry_core import Surface
from src.utils.errors import GeometryError
from src.utils.quadrature import gauss_hermite_rule

logger = logging.getLogger(__name__)


def circle(radius: float, count: int = 256, center=(0.0, 0.0)) -> Surface:
    theta = 2.0 * np.pi * np.arange(count) / count
    samples = np.column_stack([center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)])
    return Surface(kind="plane_curve", ambient_dimension=2, samples=samples, mean_convex=True)


def ellipse(a: float, b: float, count: int = 256) -> Surface:
    """Ellipse with semi-axes a (along x) and b, resampled to uniform arclength."""
    theta = 2.0 * np.pi * np.arange(4 * count) / (4 * count)
    samples = np.column_stack([a * np.cos(theta), b * np.sin(theta)])
    dense = Surface(kind="plane_curve", ambient_dimension=2, samples=samples)
    return Surface(kind="plane_curve", ambient_dimension=2,
                   samples=dense.resampled(count=count).samples, mean_convex=True)


def ellipse_curvature(a: float, b: float, theta: np.ndarray) -> np.ndarray:
    """Closed-form curvature of (a cos t, b sin t)."""
    theta = np.asarray(theta, dtype=float)
    return a * b / (a ** 2 * np.sin(theta) ** 2 + b ** 2 * np.cos(theta) ** 2) ** 1.5


def sphere_profile(n: int, radius: float, count: int = 129) -> Surface:
    """Meridian of the round sphere S^n of given radius, capped at both poles."""
    theta = np.linspace(0.0, np.pi, count)
    samples = np.column_stack([-radius * np.cos(theta), radius * np.sin(theta)])
    samples[0, 1] = samples[-1, 1] = 0.0
    return Surface(kind="profile_of_revolution", ambient_dimension=n + 1, samples=samples,
                   ends="capped", mean_convex=True)


def sphere(n: int, radius: float, count: int = 256) -> Surface:
    """Round sphere; a circle for n = 1, a capped profile otherwise."""
    if n == 1:
        return circle(radius, count)
    return sphere_profile(n, radius, count // 2 + 1)


def cylinder_profile(n: int, radius: Optional[float] = None, period: float = 2.0,
                     count: int = 64) -> Surface:
    """Straight cylinder S^{n-1}_radius x R as a periodic profile (default radius sqrt(2(n-1)))."""
    if n < 2:
        raise GeometryError("cylinder profiles need n >= 2")
    radius = float(np.sqrt(2.0 * (n - 1))) if radius is None else radius
    x = -0.5 * period + period * np.arange(count) / count
    samples = np.column_stack([x, np.full(count, radius)])
    return Surface(kind="profile_of_revolution", ambient_dimension=n + 1, samples=samples,
                   ends="periodic", period=period, mean_convex=True)


def dumbbell_profile(n: int = 2, count: int = 401, half_length: float = 3.0,
                     neck: float = 0.4, bulge: float = 2.0) -> Surface:
    """
    Rotationally symmetric dumbbell r = sqrt(1 - t^2)(neck + bulge t^2), t = x/half_length.

    The profile is resampled to uniform arclength; construction fails with a
    GeometryError when the parameters do not give a mean-convex surface.
    """
    t = np.linspace(-1.0, 1.0, 8 * count)
    r = np.sqrt(np.clip(1.0 - t ** 2, 0.0, None)) * (neck + bulge * t ** 2)
    r[0] = r[-1] = 0.0
    dense = Surface(kind="profile_of_revolution", ambient_dimension=n + 1,
                    samples=np.column_stack([half_length * t, r]), ends="capped")
    resampled = dense.resampled(count=count)
    surface = Surface(kind="profile_of_revolution", ambient_dimension=n + 1,
                      samples=resampled.samples, ends="capped", mean_convex=True)
    logger.info(f"✅ Dumbbell profile built: {count} samples, neck radius {neck}")
    return surface


def _orthogonal_bump(decay: float) -> Callable[[np.ndarray], np.ndarray]:
    """
    (x^4 + a x^2 + c) e^{-x^2/decay} with a, c chosen so that the bump is
    Gaussian-orthogonal to 1 and x^2 - 2, the non-decaying modes of the
    linearized rescaled flow on the cylinder.
    """
    y, w = gauss_hermite_rule(1, 64)
    y = y[:, 0]
    env = np.exp(-y ** 2 / decay)
    basis = [y ** 4 * env, y ** 2 * env, env]
    tests = [np.ones_like(y), y ** 2 - 2.0]
    mat = np.array([[w @ (t * basis[1]), w @ (t * basis[2])] for t in tests])
    rhs = -np.array([w @ (t * basis[0]) for t in tests])
    a, c = np.linalg.solve(mat, rhs)
    return lambda x: (x ** 4 + a * x ** 2 + c) * np.exp(-x ** 2 / decay)


def perturbed_cylinder_profile(n: int = 2, epsilon: float = 1e-3, half_length: float = 14.0,
                               count: int = 561, decay: float = 16.0) -> Surface:
    """
    Open profile r = rho - epsilon * g(x) over [-half_length, half_length] with free ends,
    where rho = sqrt(2(n-1)) and g is a decaying bump without constant or x^2 - 2 part.
    """
    rho = float(np.sqrt(2.0 * (n - 1)))
    bump = _orthogonal_bump(decay)
    x = np.linspace(-half_length, half_length, count)
    samples = np.column_stack([x, rho - epsilon * bump(x)])
    return Surface(kind="profile_of_revolution", ambient_dimension=n + 1, samples=samples, ends="free")


def graph_profile(n: int, w: Callable[[np.ndarray], np.ndarray], half_length: float = 14.0,
                  count: int = 2801) -> Surface:
    """Graph r = rho - w(x) over S^{n-1}_rho x R (inward convention), free ends."""
    rho = float(np.sqrt(2.0 * (n - 1)))
    x = np.linspace(-half_length, half_length, count)
    r = rho - np.asarray(w(x), dtype=float) * np.ones_like(x)
    if np.any(r <= 0.0):
        raise GeometryError("graph is not immersed: 1 - w/rho must stay positive")
    return Surface(kind="profile_of_revolution", ambient_dimension=n + 1,
                   samples=np.column_stack([x, r]), ends="free")


def graph_curve(w: Callable[[np.ndarray], np.ndarray], count: int = 1024) -> Surface:
    """Closed curve of radius sqrt(2) - w(theta) (inward convention)."""
    rho = float(np.sqrt(2.0))
    theta = 2.0 * np.pi * np.arange(count) / count
    r = rho - np.asarray(w(theta), dtype=float) * np.ones_like(theta)
    if np.any(r <= 0.0):
        raise GeometryError("graph is not immersed: 1 - w/rho must stay positive")
    return Surface(kind="plane_curve", ambient_dimension=2,
                   samples=np.column_stack([r * np.cos(theta), r * np.sin(theta)]))


def random_rotation(dimension: int, seed: int = 0) -> np.ndarray:
    """Haar-random rotation (det = +1)."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(dimension, dimension)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


BUILDERS = {
    "circle": lambda p: circle(p["radius"], int(p.get("count", 256))),
    "ellipse": lambda p: ellipse(p["a"], p["b"], int(p.get("count", 256))),
    "sphere": lambda p: sphere(int(p["n"]), p["radius"], int(p.get("count", 256))),
    "cylinder": lambda p: cylinder_profile(int(p["n"]), p.get("radius"), p.get("period", 2.0),
                                           int(p.get("count", 64))),
    "dumbbell": lambda p: dumbbell_profile(int(p.get("n", 2)), int(p.get("count", 401)),
                                           p.get("half_length", 3.0), p.get("neck", 0.4),
                                           p.get("bulge", 2.0)),
    "perturbed_cylinder": lambda p: perturbed_cylinder_profile(int(p.get("n", 2)), p.get("epsilon", 1e-3),
                                                               p.get("half_length", 14.0),
                                                               int(p.get("count", 561))),
}


def build_surface(shape: str, params: dict) -> Surface:
    """Dispatch a named builder; unknown names raise GeometryError."""
    try:
        builder = BUILDERS[shape]
    except KeyError as exc:
        raise GeometryError(f"unknown shape '{shape}' (known: {sorted(BUILDERS)})") from exc
    try:
        return builder(params)
    except KeyError as exc:
        raise GeometryError(f"shape '{shape}' is missing parameter {exc}") from exc

"""
Drift Laplacian L v = Delta v - 1/2 <x, grad v> on R^n and on shrinking cylinders,
its Hermite eigenfunctions, the kernel of L + 1 on S^{n-k} x R^k, Gaussian
projections onto that kernel, the linearization of graph mean curvature, and the
frequency function U = D/I with the polynomial / exponential growth dichotomy.

Cylinder functions are polynomials in local coordinates (y, z): y in R^k along
the axis and z the ambient coordinates of the sphere factor, restricted to
|z| = sqrt(2(n-k)). Restrictions of degree-L polynomials in z span the
spherical harmonics up to degree L.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp

from src.services import shapes
from src.services.geometry_core import ShrinkerCylinder, shrinker_residual
from src.utils.errors import DegenerateError, DomainError, GeometryError
from src.utils.fitting import fit_power_law
from src.utils.polynomial import Polynomial, multi_indices
from src.utils.quadrature import ball_rule, gauss_hermite_rule, sphere_rule

logger = logging.getLogger(__name__)

BASIS_DEGREE = 8
OVERFLOW_LIMIT = 1e150
PROJECTION_MARGIN = 1.0


class DriftFunction(Protocol):
    def value(self, points: np.ndarray) -> np.ndarray: ...

    def gradient(self, points: np.ndarray) -> np.ndarray: ...

    def hessian(self, points: np.ndarray) -> np.ndarray: ...


class RadialFunction:
    """v(x) = g(|x|) from g, g', g'' (vectorized in r)."""

    def __init__(self, g: Callable, dg: Callable, d2g: Callable, dimension: int,
                 domain_radius: float = np.inf):
        self.g, self.dg, self.d2g = g, dg, d2g
        self.dimension = dimension
        self.domain_radius = domain_radius

    @classmethod
    def power(cls, d: float, dimension: int) -> "RadialFunction":
        """|x|^d."""
        return cls(lambda r: r ** d, lambda r: d * r ** (d - 1.0), lambda r: d * (d - 1.0) * r ** (d - 2.0),
                   dimension)

    def value(self, points):
        return self.g(np.linalg.norm(np.atleast_2d(points), axis=1))

    def gradient(self, points):
        points = np.atleast_2d(points)
        r = np.linalg.norm(points, axis=1)
        return (self.dg(r) / r)[:, None] * points

    def hessian(self, points):
        points = np.atleast_2d(points)
        r = np.linalg.norm(points, axis=1)
        unit = points / r[:, None]
        radial = self.d2g(r)
        tangential = self.dg(r) / r
        eye = np.eye(points.shape[1])
        return (tangential[:, None, None] * (eye - unit[:, :, None] * unit[:, None, :])
                + radial[:, None, None] * unit[:, :, None] * unit[:, None, :])


@dataclass
class CylinderFunction:
    """Polynomial in local cylinder coordinates (y_1..y_k, z_1..z_{n-k+1})."""

    polynomial: Polynomial
    cylinder: ShrinkerCylinder
    domain_radius: float = np.inf

    def __post_init__(self):
        n, k = self.cylinder.n, self.cylinder.k
        if self.polynomial.nvars != n + 1:
            raise ValueError(f"cylinder functions take {n + 1} local variables")
        for exp in self.polynomial.terms:
            if sum(exp[:k]) > BASIS_DEGREE or sum(exp[k:]) > BASIS_DEGREE:
                raise ValueError(f"term {exp} exceeds the tensor basis degree {BASIS_DEGREE}")

    def local(self, points: np.ndarray) -> np.ndarray:
        return self.cylinder.local_coordinates(points)

    def value(self, points):
        return self.polynomial.value(self.local(points))


def _sphere_laplacian(poly: Polynomial, local: np.ndarray, k: int) -> np.ndarray:
    """Delta_theta = Delta_z - d_rr - ((d-1)/r) d_r on the sphere |z| = r in R^d."""
    z = local[:, k:]
    d = z.shape[1]
    r = np.linalg.norm(z, axis=1)
    unit = z / r[:, None]
    grad = poly.gradient(local)[:, k:]
    hess = poly.hessian(local)[:, k:, k:]
    lap = np.trace(hess, axis1=1, axis2=2)
    d_r = np.sum(grad * unit, axis=1)
    d_rr = np.einsum("mi,mij,mj->m", unit, hess, unit)
    return lap - d_rr - (d - 1) / r * d_r


def drift_apply(v, x: np.ndarray, cylinder: Optional[ShrinkerCylinder] = None) -> np.ndarray:
    """
    L v at the rows of x.

    On R^n (`cylinder=None`) v provides gradient and Hessian in the same
    coordinates as x. On a cylinder, x are ambient points on the cylinder and v
    is a CylinderFunction (or a Polynomial in local coordinates); then
    L v = Delta_y v - 1/2 <y, grad_y v> + Delta_theta v.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if cylinder is None and isinstance(v, CylinderFunction):
        cylinder = v.cylinder
    if cylinder is None:
        lap = np.trace(v.hessian(x), axis1=1, axis2=2)
        return lap - 0.5 * np.sum(x * v.gradient(x), axis=1)
    poly = v.polynomial if isinstance(v, CylinderFunction) else v
    local = cylinder.local_coordinates(x)
    k = cylinder.k
    if k:
        grad_y = poly.gradient(local)[:, :k]
        hess_y = poly.hessian(local)[:, :k, :k]
        axis_part = np.trace(hess_y, axis1=1, axis2=2) - 0.5 * np.sum(local[:, :k] * grad_y, axis=1)
    else:
        axis_part = 0.0
    return axis_part + _sphere_laplacian(poly, local, k)


def cylinder_points(cylinder: ShrinkerCylinder, count: int, seed: int = 0,
                    axis_radius: float = 3.0) -> np.ndarray:
    """Random ambient points on the cylinder with |y| <= axis_radius."""
    rng = np.random.default_rng(seed)
    n, k = cylinder.n, cylinder.k
    z = rng.normal(size=(count, n - k + 1))
    z = cylinder.radius * z / np.linalg.norm(z, axis=1)[:, None]
    if k:
        y = rng.normal(size=(count, k))
        y *= (axis_radius * rng.uniform(size=(count, 1)) ** (1.0 / k)) / np.linalg.norm(y, axis=1)[:, None]
    else:
        y = np.zeros((count, 0))
    return cylinder.from_local(np.column_stack([y, z]))


# --------------------------------------------------------------------------------------
# Hermite eigenfunctions on R^n
# --------------------------------------------------------------------------------------

def hermite_eigen(n: int, two_lambda: int) -> List[Polynomial]:
    """
    Basis of polynomial eigenfunctions L v = -lambda v, lambda = two_lambda/2.

    Each element is a tensor product of rescaled Hermite polynomials with
    monic leading monomial, e.g. x_1^2 - 2 and x_1 x_2 for n = 2, 2 lambda = 2.
    The basis is orthogonal in the Gaussian inner product.
    """
    if two_lambda < 0:
        raise ValueError("two_lambda must be non-negative")
    return [Polynomial.hermite_tensor(m, nvars=n) * 2.0 ** (two_lambda / 2.0)
            for m in multi_indices(n, two_lambda)]


def eigen_residual(v, eigenvalue: float, points: np.ndarray,
                   cylinder: Optional[ShrinkerCylinder] = None) -> float:
    """max |L v + eigenvalue v| over points."""
    if cylinder is None and not isinstance(v, CylinderFunction):
        values = v.value(points)
    else:
        cyl = cylinder or v.cylinder
        poly = v.polynomial if isinstance(v, CylinderFunction) else v
        values = poly.value(cyl.local_coordinates(points))
    return float(np.max(np.abs(drift_apply(v, points, cylinder) + eigenvalue * values)))


def gaussian_inner(p, q, n: int, nodes: int = 24) -> float:
    """int_{R^n} p q e^{-|x|^2/4} by tensor Gauss-Hermite."""
    pts, w = gauss_hermite_rule(n, nodes)
    return float(w @ (p.value(pts) * q.value(pts)))


def rayleigh_check(v: Polynomial, n: int, eigenvalue: float, nodes: int = 24) -> Dict[str, float]:
    """Gaussian Dirichlet energy against 2 lambda times the Gaussian L^2 norm."""
    pts, w = gauss_hermite_rule(n, nodes)
    energy = float(w @ np.sum(v.gradient(pts) ** 2, axis=1))
    mass = float(w @ v.value(pts) ** 2)
    return {"energy": energy, "mass": mass, "bound": 2.0 * eigenvalue * mass,
            "satisfied": energy <= 2.0 * eigenvalue * mass + 1e-8}


# --------------------------------------------------------------------------------------
# kernel of L + 1 on cylinders
# --------------------------------------------------------------------------------------

@dataclass
class KernelElement:
    """
    sum a_i (y_i^2 - 2) + sum a_ij y_i y_j + sum c_im y_i z_m on S^{n-k} x R^k.

    Indices are zero-based: y_i is the i-th axis coordinate, z_m the m-th
    ambient coordinate of the sphere factor.
    """

    n: int
    k: int
    quadratic: Dict[int, float] = field(default_factory=dict)
    mixed: Dict[Tuple[int, int], float] = field(default_factory=dict)
    rotation: Dict[Tuple[int, int], float] = field(default_factory=dict)

    @property
    def polynomial(self) -> Polynomial:
        nv = self.n + 1
        result = Polynomial(nv)
        y = [Polynomial.coordinate(nv, i) for i in range(self.k)]
        z = [Polynomial.coordinate(nv, self.k + m) for m in range(self.n - self.k + 1)]
        for i, a in self.quadratic.items():
            result = result + a * (y[i] * y[i] - 2.0)
        for (i, j), a in self.mixed.items():
            result = result + a * (y[i] * y[j])
        for (i, m), c in self.rotation.items():
            result = result + c * (y[i] * z[m])
        return result

    def function(self, cylinder: Optional[ShrinkerCylinder] = None) -> CylinderFunction:
        return CylinderFunction(self.polynomial, cylinder or ShrinkerCylinder.standard(self.n, self.k))

    def coefficients(self) -> np.ndarray:
        """Coefficients in the order of `kernel_basis`."""
        return np.array([self.quadratic.get(i, 0.0) for i in range(self.k)]
                        + [self.mixed.get(p, 0.0) for p in combinations(range(self.k), 2)]
                        + [self.rotation.get((i, m), 0.0) for i in range(self.k)
                           for m in range(self.n - self.k + 1)])

    @classmethod
    def from_coefficients(cls, n: int, k: int, coefs: Sequence[float]) -> "KernelElement":
        coefs = list(coefs)
        quadratic = {i: coefs.pop(0) for i in range(k)}
        mixed = {p: coefs.pop(0) for p in combinations(range(k), 2)}
        rotation = {(i, m): coefs.pop(0) for i in range(k) for m in range(n - k + 1)}
        return cls(n, k, quadratic, mixed, rotation)

    def as_dict(self) -> Dict[str, float]:
        out = {f"y{i + 1}^2-2": a for i, a in self.quadratic.items()}
        out.update({f"y{i + 1}*y{j + 1}": a for (i, j), a in self.mixed.items()})
        out.update({f"y{i + 1}*theta{m + 1}": c for (i, m), c in self.rotation.items()})
        return {"n": self.n, "k": self.k, "coefficients": {key: float(v) for key, v in out.items()}}


def kernel_dimension(n: int, k: int) -> int:
    return k + k * (k - 1) // 2 + k * (n - k + 1)


def kernel_basis(n: int, k: int) -> List[KernelElement]:
    """{y_i^2 - 2}, {y_i y_j}, {y_i z_m}: a basis of ker(L + 1) on S^{n-k}_{sqrt(2(n-k))} x R^k."""
    if not 0 <= k <= n - 1:
        raise ValueError(f"need 0 <= k <= n-1, got n={n}, k={k}")
    size = kernel_dimension(n, k)
    return [KernelElement.from_coefficients(n, k, np.eye(size)[j]) for j in range(size)]


def cylinder_rule(cylinder: ShrinkerCylinder, axis_nodes: int = 24,
                  sphere_degree: int = 16) -> Tuple[np.ndarray, np.ndarray]:
    """
    Local-coordinate nodes and weights for int over the cylinder against e^{-|x|^2/4}:
    Gauss-Hermite along the axis times a sphere rule on the cross-section.
    """
    n, k, rho = cylinder.n, cylinder.k, cylinder.radius
    y, wy = gauss_hermite_rule(k, axis_nodes)
    omega, wo = sphere_rule(n - k + 1, sphere_degree)
    wo = wo * rho ** (n - k) * np.exp(-rho ** 2 / 4.0)
    nodes = np.column_stack([np.repeat(y, len(omega), axis=0), np.tile(rho * omega, (len(y), 1))])
    weights = np.repeat(wy, len(omega)) * np.tile(wo, len(y))
    return nodes, weights


@dataclass
class KernelProjection:
    element: KernelElement
    remainder_sup: float
    gaussian_norm: float
    sup_radius: float

    def as_dict(self) -> dict:
        return {"element": self.element.as_dict(), "remainder_sup": self.remainder_sup,
                "gaussian_norm": self.gaussian_norm, "sup_radius": self.sup_radius}


def _local_values(w, local: np.ndarray, cylinder: ShrinkerCylinder) -> np.ndarray:
    if isinstance(w, CylinderFunction):
        return w.polynomial.value(local)
    if isinstance(w, Polynomial):
        return w.value(local)
    return np.asarray(w(local), dtype=float)


def kernel_project(w, cyl: ShrinkerCylinder, samples: int = 4000, seed: int = 0) -> KernelProjection:
    """
    Gaussian-L^2 orthogonal projection of w onto ker(L + 1) and the sup of the
    remainder over |x| <= 3n on a dense sample of the cylinder.

    `w` is a CylinderFunction, a Polynomial in local coordinates or a callable
    on local coordinates; an optional `domain_radius` attribute must be at least
    3n + margin.
    """
    n, k = cyl.n, cyl.k
    sup_radius = 3.0 * n
    domain = getattr(w, "domain_radius", np.inf)
    if domain < sup_radius + PROJECTION_MARGIN:
        raise DomainError(f"w is defined on B_{domain:g}; projection needs radius >= {sup_radius + PROJECTION_MARGIN:g}")
    basis = kernel_basis(n, k)
    if not basis:
        raise DomainError("the kernel of L + 1 is trivial on the round sphere (k = 0)")
    nodes, weights = cylinder_rule(cyl)
    inside = np.linalg.norm(nodes, axis=1) <= domain
    nodes, weights = nodes[inside], weights[inside]
    table = np.column_stack([b.polynomial.value(nodes) for b in basis])
    target = _local_values(w, nodes, cyl)
    gram = table.T @ (weights[:, None] * table)
    coefs = np.linalg.solve(gram, table.T @ (weights * target))
    element = KernelElement.from_coefficients(n, k, coefs)

    axis_radius = float(np.sqrt(max(sup_radius ** 2 - cyl.radius ** 2, 0.0)))
    dense = cyl.local_coordinates(cylinder_points(cyl, samples, seed=seed, axis_radius=axis_radius))
    remainder = _local_values(w, dense, cyl) - element.polynomial.value(dense)
    norm = float(np.sqrt(weights @ target ** 2))
    return KernelProjection(element=element, remainder_sup=float(np.max(np.abs(remainder))),
                            gaussian_norm=norm, sup_radius=sup_radius)


def projection_sweep(n: int, k: int, deltas: Sequence[float], base: Optional[KernelElement] = None,
                     seed: int = 0) -> Dict[str, object]:
    """
    Manufactured inputs w = K + delta * He_4(y_1) with (L + 1) w = -delta He_4(y_1):
    fit remainder_sup ~ C delta^nu.
    """
    cyl = ShrinkerCylinder.standard(n, k)
    base = base or KernelElement.from_coefficients(n, k, np.linspace(0.3, -0.2, kernel_dimension(n, k)))
    quartic = Polynomial.hermite_tensor([4], nvars=n + 1) * 4.0
    remainders = []
    for delta in deltas:
        w = base.polynomial + delta * quartic
        remainders.append(kernel_project(w, cyl, seed=seed).remainder_sup)
    fit = fit_power_law(np.asarray(deltas), np.asarray(remainders))
    return {"deltas": list(deltas), "remainders": remainders, "nu": fit.exponent, "C": fit.constant,
            "fit": fit.as_dict()}


# --------------------------------------------------------------------------------------
# graph mean curvature
# --------------------------------------------------------------------------------------

@dataclass
class Linearization:
    points: np.ndarray
    exact: np.ndarray
    linear: np.ndarray
    remainder: np.ndarray
    phi_mismatch: np.ndarray

    @property
    def remainder_sup(self) -> float:
        return float(np.max(np.abs(self.remainder)))

    @property
    def phi_mismatch_sup(self) -> float:
        return float(np.max(np.abs(self.phi_mismatch)))

    def as_dict(self) -> dict:
        return {"remainder_sup": self.remainder_sup, "phi_mismatch_sup": self.phi_mismatch_sup,
                "exact_mean": float(np.mean(self.exact)), "samples": int(len(self.exact))}


def _as_polynomial(w, nvars: int) -> Polynomial:
    if isinstance(w, CylinderFunction):
        return w.polynomial
    if isinstance(w, Polynomial):
        return w
    if np.isscalar(w):
        return Polynomial.constant(nvars, float(w))
    raise GeometryError("graph functions must be polynomials in local cylinder coordinates")


def graph_H_linearize(w, cyl: ShrinkerCylinder, half_length: float = 3.0, count: int = 1201,
                      curve_count: int = 2048) -> Linearization:
    """
    Exact mean curvature of the graph of w over the cylinder (radius rho - w)
    against H_C + (Delta_theta + Delta_x + 1/2) w, and phi - (L + 1) w.

    Supported graphs: w(y_1) over S^{n-1} x R (profiles, interior |y_1| <= half_length - 1)
    and w(theta) over the circle of radius sqrt(2).
    """
    n, k = cyl.n, cyl.k
    poly = _as_polynomial(w, n + 1)
    rho, h_c = cyl.radius, cyl.mean_curvature

    if k == 1 and all(sum(e[1:]) == 0 for e in poly.terms):
        w0 = poly
        w1, w2 = poly.derivative(0), poly.derivative(0).derivative(0)

        def lift(x):
            pts = np.zeros((len(x), n + 1))
            pts[:, 0] = x
            return pts

        surface = shapes.graph_profile(n, lambda x: w0.value(lift(x)), half_length=half_length, count=count)
        x = surface.samples[:, 0]
        keep = np.abs(x) <= half_length - 1.0
        pts = lift(x[keep])
        wv, wp, wpp = w0.value(pts), w1.value(pts), w2.value(pts)
        linear = h_c + wpp + 0.5 * wv
        operator = wpp - 0.5 * x[keep] * wp + wv
        points = surface.samples[keep]
    elif n == 1 and k == 0:
        theta = 2.0 * np.pi * np.arange(curve_count) / curve_count
        z = rho * np.column_stack([np.cos(theta), np.sin(theta)])
        dz = rho * np.column_stack([-np.sin(theta), np.cos(theta)])
        wv = poly.value(z)
        w_tt = np.einsum("mi,mij,mj->m", dz, poly.hessian(z), dz) - np.sum(poly.gradient(z) * z, axis=1)
        surface = shapes.graph_curve(lambda t: poly.value(rho * np.column_stack([np.cos(t), np.sin(t)])),
                                     count=curve_count)
        keep = np.ones(curve_count, dtype=bool)
        laplace = w_tt / rho ** 2
        linear = h_c + laplace + 0.5 * wv
        operator = laplace + wv
        points = surface.samples
    else:
        raise GeometryError("graph_H_linearize supports w(y_1) over S^{n-1} x R and w(theta) over S^1")

    exact = surface.mean_curvatures[keep]
    phi = shrinker_residual(surface).values[keep]
    return Linearization(points=points, exact=exact, linear=linear, remainder=exact - linear,
                         phi_mismatch=phi - operator)


def linearization_sweep(n: int, k: int, epsilons: Sequence[float]) -> Dict[str, object]:
    """w = eps (y_1^2 - 2) (or eps cos 2 theta on the circle): fit remainder ~ eps^slope."""
    cyl = ShrinkerCylinder.standard(n, k)
    if k == 1:
        base = KernelElement(n, k, quadratic={0: 1.0}).polynomial
    else:
        z0, z1 = Polynomial.coordinate(2, 0), Polynomial.coordinate(2, 1)
        base = (z0 * z0 - z1 * z1) * 0.5
    remainders = [graph_H_linearize(eps * base, cyl).remainder_sup for eps in epsilons]
    fit = fit_power_law(np.asarray(epsilons), np.asarray(remainders))
    return {"epsilons": list(epsilons), "remainders": remainders, "slope": fit.exponent, "fit": fit.as_dict()}


# --------------------------------------------------------------------------------------
# frequency
# --------------------------------------------------------------------------------------

@dataclass
class FrequencyProblem:
    n: int
    u: DriftFunction
    potential: Union[float, Callable[[np.ndarray], np.ndarray]] = 0.0
    r_min: float = 0.1
    r_max: float = 20.0
    sphere_degree: int = 24
    radial_nodes: int = 64

    def potential_values(self, points: np.ndarray) -> np.ndarray:
        if callable(self.potential):
            return np.asarray(self.potential(points), dtype=float)
        return np.full(len(points), float(self.potential))


@dataclass
class FrequencyPoint:
    r: float
    I: float
    D_surface: float
    D_bulk: float
    U: float

    @property
    def discrepancy(self) -> float:
        return abs(self.D_surface - self.D_bulk) / max(abs(self.D_surface), 1e-300)

    def as_dict(self) -> dict:
        return {"r": self.r, "I": self.I, "D_surface": self.D_surface, "D_bulk": self.D_bulk, "U": self.U,
                "discrepancy": self.discrepancy}


def frequency(prob: FrequencyProblem, r: float) -> FrequencyPoint:
    """
    I = r^{1-n} int_{dB_r} u^2, D = r^{2-n} int_{dB_r} u u_r (authoritative) and
    D = r^{2-n} e^{f(r)} int_{B_r} (|grad u|^2 - V u^2) e^{-f}, U = D/I.

    The bulk form subtracts O(1) integrals to obtain an O(e^{-f(r)}) quantity and
    loses relative accuracy like e^{r^2/4} times rounding.
    """
    if not prob.r_min <= r <= prob.r_max:
        raise DomainError(f"r = {r} outside [{prob.r_min}, {prob.r_max}]")
    n = prob.n
    omega, w_omega = sphere_rule(n, prob.sphere_degree)
    pts = r * omega
    u = prob.u.value(pts)
    u_r = np.sum(prob.u.gradient(pts) * omega, axis=1)
    I = float(w_omega @ u ** 2)
    if not I > 0.0:
        raise DegenerateError(f"I({r:g}) = {I:.3e}: frequency undefined")
    d_surface = float(r * (w_omega @ (u * u_r)))

    bpts, bw = ball_rule(n, r, radial_nodes=prob.radial_nodes, degree=prob.sphere_degree)
    grad2 = np.sum(prob.u.gradient(bpts) ** 2, axis=1)
    integrand = (grad2 - prob.potential_values(bpts) * prob.u.value(bpts) ** 2)
    shifted = np.exp((r ** 2 - np.sum(bpts ** 2, axis=1)) / 4.0)
    d_bulk = float(r ** (2 - n) * (bw @ (integrand * shifted)))
    return FrequencyPoint(r=float(r), I=I, D_surface=d_surface, D_bulk=d_bulk, U=d_surface / I)


@dataclass
class FrequencyCurve:
    points: List[FrequencyPoint]
    U_prime: np.ndarray
    log_I_residual: np.ndarray

    @property
    def radii(self) -> np.ndarray:
        return np.array([p.r for p in self.points])

    @property
    def U(self) -> np.ndarray:
        return np.array([p.U for p in self.points])

    def rows(self) -> List[dict]:
        return [{**p.as_dict(), "U_prime": float(dU), "log_I_residual": float(res)}
                for p, dU, res in zip(self.points, self.U_prime, self.log_I_residual)]


def frequency_curve(prob: FrequencyProblem, radii: Sequence[float], step: float = 1e-4) -> FrequencyCurve:
    """U on a radius grid with U'(r) and the residual of (log I)' = 2U/r by centered differences."""
    radii = np.asarray(sorted(radii), dtype=float)
    points, du, residual = [], [], []
    for r in radii:
        lo, hi = max(r - step, prob.r_min), min(r + step, prob.r_max)
        p, p_lo, p_hi = frequency(prob, r), frequency(prob, lo), frequency(prob, hi)
        points.append(p)
        du.append((p_hi.U - p_lo.U) / (hi - lo))
        residual.append((np.log(p_hi.I) - np.log(p_lo.I)) / (hi - lo) - 2.0 * p.U / r)
    return FrequencyCurve(points=points, U_prime=np.array(du), log_I_residual=np.array(residual))


# --------------------------------------------------------------------------------------
# growth dichotomy for radial eigenfunctions
# --------------------------------------------------------------------------------------

@dataclass
class DichotomyResult:
    lam: float
    n: int
    radii: np.ndarray
    U: np.ndarray
    threshold: float
    crossing_radius: Optional[float]
    onset_radius: Optional[float]
    bound_verified: bool
    initial_frequency: float
    renormalizations: int
    verdict: str

    def rows(self) -> List[dict]:
        bound = self.radii ** 2 / 2.0 - self.n - 2.0 * self.lam
        return [{"r": float(r), "U": float(u), "lower_bound": float(b)} for r, u, b in zip(self.radii, self.U, bound)]

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "n": self.n, "threshold": self.threshold,
                "crossing_radius": self.crossing_radius, "onset_radius": self.onset_radius,
                "bound_verified": self.bound_verified, "initial_frequency": self.initial_frequency,
                "renormalizations": self.renormalizations, "verdict": self.verdict,
                "final_U": float(self.U[-1])}


def dichotomy_probe(lam: float, u0: float, du0: float, r0: float = 1.0, r_max: float = 20.0, n: int = 2,
                    r1: float = 6.0, delta: float = 0.5, eps: float = 0.5, samples: int = 400) -> DichotomyResult:
    """
    Integrate u'' + ((n-1)/r - r/2) u' = -lambda u from r0 and follow U = r u'/u.

    Verdicts:
        exponential: U reaches delta + 2 max(0, lambda) beyond r1 and
            U > r^2/2 - n - 2 lambda - eps holds on [R_1, r_max]
        polynomial: no crossing beyond r1 and |U(r_max) - 2 lambda| <= delta
        undetermined: otherwise
    """
    if r0 <= 0.0 or r_max <= r0:
        raise ValueError("need 0 < r0 < r_max")

    def rhs(r, y):
        return [y[1], -((n - 1) / r - r / 2.0) * y[1] - lam * y[0]]

    radii = np.linspace(r0, r_max, samples)
    state = np.array([u0, du0], dtype=float)
    u_vals, du_vals = [state[0]], [state[1]]
    renormalizations = 0
    for a, b in zip(radii[:-1], radii[1:]):
        sol = solve_ivp(rhs, (a, b), state, method="RK45", rtol=1e-11, atol=1e-14)
        state = sol.y[:, -1]
        scale = np.linalg.norm(state)
        if scale > OVERFLOW_LIMIT:
            state = state / scale
            renormalizations += 1
        u_vals.append(state[0])
        du_vals.append(state[1])
    u_vals, du_vals = np.array(u_vals), np.array(du_vals)
    with np.errstate(divide="ignore", invalid="ignore"):
        U = radii * du_vals / u_vals

    threshold = delta + 2.0 * max(0.0, lam)
    beyond = radii >= r1
    crossing_idx = np.flatnonzero(beyond & (U >= threshold))
    crossing = float(radii[crossing_idx[0]]) if crossing_idx.size else None
    bound = radii ** 2 / 2.0 - n - 2.0 * lam - eps
    onset, verified = None, False
    if crossing is not None:
        failing = np.flatnonzero(~(U > bound) & (radii >= crossing))
        start = crossing_idx[0] if failing.size == 0 else failing[-1] + 1
        if start < len(radii):
            onset = float(radii[start])
            verified = bool(np.all(U[start:] > bound[start:]))
    if crossing is not None and verified:
        verdict = "exponential"
    elif crossing is None and abs(U[-1] - 2.0 * lam) <= delta:
        verdict = "polynomial"
    else:
        verdict = "undetermined"
    logger.info(f"📊 Dichotomy lambda={lam}: verdict {verdict}, crossing {crossing}, onset {onset}")
    return DichotomyResult(lam=lam, n=n, radii=radii, U=U, threshold=threshold, crossing_radius=crossing,
                           onset_radius=onset, bound_verified=verified, initial_frequency=float(U[0]),
                           renormalizations=renormalizations, verdict=verdict)

"""
Quadrature rules for Gaussian-weighted integrals.

Sphere rules are products of Gauss-Jacobi rules in the polar angle (Gauss-Legendre
on S^2, trapezoid on S^1); ball rules add a radial Gauss-Legendre factor; axis
integrals against e^{-|y|^2/4} use Gauss-Hermite (probabilists') nodes.
"""

from functools import lru_cache
from math import gamma, pi
from typing import Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi


def sphere_area(n: int) -> float:
    """|S^{n-1}|, the area of the unit sphere in R^n."""
    return 2.0 * pi ** (n / 2.0) / gamma(n / 2.0)


def gaussian_weight(points: np.ndarray) -> np.ndarray:
    """e^{-|x|^2/4} evaluated row-wise."""
    points = np.atleast_2d(points)
    return np.exp(-0.25 * np.einsum("ij,ij->i", points, points))


@lru_cache(maxsize=64)
def _sphere_rule_cached(n: int, degree: int) -> Tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValueError("sphere dimension must be >= 1")
    if n == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if n == 2:
        m = degree + 2 + (degree % 2)  # even count keeps the rule symmetric
        phi = 2.0 * pi * np.arange(m) / m
        nodes = np.column_stack([np.cos(phi), np.sin(phi)])
        return nodes, np.full(m, 2.0 * pi / m)

    alpha = (n - 3) / 2.0
    q = degree // 2 + 1
    t, wt = roots_jacobi(q, alpha, alpha)
    sub_nodes, sub_weights = _sphere_rule_cached(n - 1, degree)
    s = np.sqrt(np.clip(1.0 - t ** 2, 0.0, None))
    nodes = np.concatenate(
        [np.column_stack([np.full(len(sub_nodes), ti), si * sub_nodes]) for ti, si in zip(t, s)]
    )
    weights = np.concatenate([wi * sub_weights for wi in wt])
    return nodes, weights


def sphere_rule(n: int, degree: int = 16) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nodes on the unit sphere S^{n-1} in R^n and weights summing to |S^{n-1}|.

    Args:
        n: ambient dimension of the sphere
        degree: polynomial degree integrated exactly

    Returns:
        (nodes, weights) with nodes of shape (m, n)
    """
    nodes, weights = _sphere_rule_cached(int(n), int(degree))
    return nodes.copy(), weights.copy()


def ball_rule(n: int, radius: float, radial_nodes: int = 48,
              degree: int = 16) -> Tuple[np.ndarray, np.ndarray]:
    """Product rule for integrals over the ball B_radius in R^n."""
    x, w = leggauss(radial_nodes)
    rho = 0.5 * radius * (x + 1.0)
    w_rho = 0.5 * radius * w * rho ** (n - 1)
    omega, w_omega = sphere_rule(n, degree)
    nodes = (rho[:, None, None] * omega[None, :, :]).reshape(-1, n)
    weights = (w_rho[:, None] * w_omega[None, :]).reshape(-1)
    return nodes, weights


@lru_cache(maxsize=32)
def _hermite_line(m: int) -> Tuple[np.ndarray, np.ndarray]:
    z, w = hermegauss(m)
    return np.sqrt(2.0) * z, np.sqrt(2.0) * w


def gauss_hermite_rule(k: int, m: int = 24) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tensor Gauss-Hermite rule for integrals over R^k against e^{-|y|^2/4}.

    The weights already contain the Gaussian factor, so sum(w * g(y)) approximates
    the weighted integral of g.
    """
    if k == 0:
        return np.zeros((1, 0)), np.ones(1)
    y1, w1 = _hermite_line(int(m))
    grids = np.meshgrid(*([y1] * k), indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    wgrids = np.meshgrid(*([w1] * k), indexing="ij")
    weights = np.prod(np.column_stack([g.ravel() for g in wgrids]), axis=1)
    return nodes, weights


@lru_cache(maxsize=16)
def segment_rule(m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes mapped to [0, 1] with weights summing to 1."""
    x, w = leggauss(int(m))
    return 0.5 * (x + 1.0), 0.5 * w

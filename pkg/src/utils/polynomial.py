"""Sparse multivariate polynomials with vectorized value / gradient / Hessian."""

from functools import cached_property
from math import sqrt
from typing import Dict, Iterable, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import hermite_e

Exponent = Tuple[int, ...]
Number = Union[int, float]


class Polynomial:
    """
    Polynomial in `nvars` real variables stored as {exponent tuple: coefficient}.

    Instances are immutable; arithmetic returns new polynomials. Coefficients
    below `1e-15` (relative to the largest) are dropped on construction.
    """

    def __init__(self, nvars: int, terms: Dict[Exponent, float] = None):
        self.nvars = int(nvars)
        cleaned: Dict[Exponent, float] = {}
        for exp, coef in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != self.nvars:
                raise ValueError(f"exponent {exp} does not match {self.nvars} variables")
            if coef != 0.0:
                cleaned[exp] = cleaned.get(exp, 0.0) + float(coef)
        scale = max((abs(c) for c in cleaned.values()), default=0.0)
        self.terms = {e: c for e, c in cleaned.items() if abs(c) > 1e-15 * scale}
        self._exps = (np.array(list(self.terms.keys()), dtype=int).reshape(-1, self.nvars))
        self._coefs = np.array(list(self.terms.values()), dtype=float)

    # construction -----------------------------------------------------------------

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def coordinate(cls, nvars: int, index: int) -> "Polynomial":
        exp = [0] * nvars
        exp[index] = 1
        return cls(nvars, {tuple(exp): 1.0})

    @classmethod
    def hermite_tensor(cls, multi_index: Sequence[int], offset: int = 0,
                       nvars: int = None) -> "Polynomial":
        """
        prod_i He_{m_i}(x_{offset+i} / sqrt(2)); an eigenfunction of the drift
        Laplacian with eigenvalue -|m|/2.
        """
        nvars = len(multi_index) + offset if nvars is None else nvars
        result = cls.constant(nvars, 1.0)
        for i, m in enumerate(multi_index):
            coeffs = hermite_e.herme2poly([0.0] * m + [1.0])
            terms = {}
            for p, c in enumerate(coeffs):
                exp = [0] * nvars
                exp[offset + i] = p
                terms[tuple(exp)] = c / sqrt(2.0) ** p
            result = result * cls(nvars, terms)
        return result

    # arithmetic -------------------------------------------------------------------

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.nvars != self.nvars:
                raise ValueError("variable count mismatch")
            return other
        return Polynomial.constant(self.nvars, float(other))

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Polynomial(self.nvars, terms)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Polynomial":
        if not isinstance(other, Polynomial):
            return Polynomial(self.nvars, {e: c * float(other) for e, c in self.terms.items()})
        other = self._coerce(other)
        terms: Dict[Exponent, float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0.0) + c1 * c2
        return Polynomial(self.nvars, terms)

    __rmul__ = __mul__

    def derivative(self, index: int) -> "Polynomial":
        terms = {}
        for e, c in self.terms.items():
            if e[index] > 0:
                ne = list(e)
                ne[index] -= 1
                terms[tuple(ne)] = c * e[index]
        return Polynomial(self.nvars, terms)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    # evaluation -------------------------------------------------------------------

    @cached_property
    def _gradient_polys(self):
        return [self.derivative(j) for j in range(self.nvars)]

    @cached_property
    def _hessian_polys(self):
        return [[g.derivative(j) for j in range(self.nvars)] for g in self._gradient_polys]

    def value(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.terms:
            return np.zeros(points.shape[0])
        # (m, T) monomial table
        monomials = np.prod(points[:, None, :] ** self._exps[None, :, :], axis=2)
        return monomials @ self._coefs

    def gradient(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.column_stack([g.value(points) for g in self._gradient_polys])

    def hessian(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        m = points.shape[0]
        hess = np.empty((m, self.nvars, self.nvars))
        for i, row in enumerate(self._hessian_polys):
            for j, h in enumerate(row):
                hess[:, i, j] = h.value(points)
        return hess

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.value(points)

    def __repr__(self) -> str:
        return f"Polynomial(nvars={self.nvars}, terms={len(self.terms)}, degree={self.degree})"


def multi_indices(nvars: int, total_degree: int) -> Iterable[Exponent]:
    """All exponent tuples of the given total degree, in lexicographic order."""
    if nvars == 0:
        if total_degree == 0:
            yield ()
        return
    if nvars == 1:
        yield (total_degree,)
        return
    for first in range(total_degree, -1, -1):
        for rest in multi_indices(nvars - 1, total_degree - first):
            yield (first,) + rest

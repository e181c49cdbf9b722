"""Smoothing kernel, Gauss-Legendre quadrature, and the local-polynomial basis.

The quantile-level smoothing integrals all take the form
``int f(t) K(t) dt`` over a sub-interval of the kernel support [-1, 1];
they are discretized with Gauss-Legendre nodes mapped onto the interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError

__all__ = ["KernelSpec", "EPANECHNIKOV", "QuadratureRule", "gauss_legendre", "PolyBasis"]


@dataclass(frozen=True)
class KernelSpec:
    """Symmetric nonnegative kernel with support [-1, 1] and unit integral."""

    kind: str = "epanechnikov"

    def __post_init__(self):
        if self.kind != "epanechnikov":
            raise DomainError(f"unsupported kernel kind {self.kind!r}")

    support: tuple = (-1.0, 1.0)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = 0.75 * (1.0 - t * t)
        out = np.where(np.abs(t) <= 1.0, out, 0.0)
        return out if out.ndim else float(out)


EPANECHNIKOV = KernelSpec()


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre nodes/weights on [-1, 1]; weights sum to 2."""

    order: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def mapped(self, lo, hi):
        """Nodes and weights transported to [lo, hi]."""
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        return mid + half * self.nodes, half * self.weights


@lru_cache(maxsize=None)
def gauss_legendre(order):
    """Gauss-Legendre rule of the given order on [-1, 1].

    Exact for polynomials up to degree 2*order - 1.
    """
    if int(order) != order or order < 2:
        raise DomainError(f"quadrature order must be an integer >= 2, got {order!r}")
    nodes, weights = np.polynomial.legendre.leggauss(int(order))
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(order=int(order), nodes=nodes, weights=weights)


class PolyBasis:
    """Taylor-style polynomial basis pi(t) = [1, t, ..., t^s / s!].

    The stacked regression design is P(x, t) = pi(t) kron [1, x'], so the
    coefficient block multiplying t^j/j! estimates the j-th derivative of
    the quantile coefficient curve directly.
    """

    def __init__(self, s):
        if int(s) != s or s < 1:
            raise DomainError(f"polynomial order must be an integer >= 1, got {s!r}")
        self.s = int(s)
        self._inv_fact = np.array([1.0 / math.factorial(j) for j in range(self.s + 1)])

    def pi(self, t):
        """Basis rows for scalar or vector t: shape (..., s+1)."""
        t = np.asarray(t, dtype=float)
        powers = t[..., None] ** np.arange(self.s + 1)
        return powers * self._inv_fact

    def design(self, x, t):
        """P(x, t) = pi(t) kron [1, x'] for one covariate row and scalar t."""
        x1 = np.concatenate([[1.0], np.atleast_1d(np.asarray(x, dtype=float))]) if np.size(x) else np.ones(1)
        return np.kron(self.pi(float(t)), x1)

    def dim(self, n_cov):
        return (self.s + 1) * (n_cov + 1)

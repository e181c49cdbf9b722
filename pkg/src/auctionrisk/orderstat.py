"""Winning-bid rank link for ascending auctions.

With I independent private ranks, the winner pays the second-highest value,
so the rank of the winning bid is the (I-1)-th order statistic of I uniforms.
Its CDF is

    phi(a) = I a^(I-1) - (I-1) a^I,

strictly increasing on [0, 1] with phi(0)=0, phi(1)=1.  This module provides
phi, its derivatives, its inverse, and the Faa di Bruno machinery used to
push quantile-function derivatives through the composition V(a) = B(phi(a)).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import DomainError

__all__ = ["phi", "phi_deriv", "phi_inverse", "bell_compose", "compose_deriv"]


def _check_count(n_bidders):
    if int(n_bidders) != n_bidders or n_bidders < 2:
        raise DomainError(f"bidder count must be an integer >= 2, got {n_bidders!r}")
    return int(n_bidders)


def _check_unit(a, name="a"):
    a = np.asarray(a, dtype=float)
    if np.any(np.isnan(a)) or np.any(a < 0.0) or np.any(a > 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {a!r}")
    return a


def phi(a, n_bidders):
    """CDF of the (I-1)-th order statistic of I uniform ranks.

    Accepts scalars or arrays in [0, 1]; returns the same shape.
    """
    i = _check_count(n_bidders)
    a = _check_unit(a)
    out = i * a ** (i - 1) - (i - 1) * a**i
    return out if out.ndim else float(out)


def _falling(n, j):
    # n (n-1) ... (n-j+1); zero once j exceeds n
    out = 1
    for k in range(j):
        out *= n - k
    return out if j <= n else 0


def phi_deriv(a, n_bidders, order=1):
    """order-th derivative of phi.  Vanishes identically for order > I."""
    i = _check_count(n_bidders)
    if int(order) != order or order < 1:
        raise DomainError(f"derivative order must be an integer >= 1, got {order!r}")
    j = int(order)
    a = _check_unit(a)
    out = np.zeros_like(a, dtype=float)
    if j <= i - 1:
        out += i * _falling(i - 1, j) * a ** (i - 1 - j)
    if j <= i:
        out -= (i - 1) * _falling(i, j) * a ** (i - j)
    return out if out.ndim else float(out)


def phi_inverse(p, n_bidders, tol=1e-12, max_iter=200):
    """Unique a in [0,1] with phi(a) = p, to |phi(a)-p| <= tol.

    Newton from the bisection midpoint, with the bracket [0,1] as a
    safeguard: phi' vanishes at a=1 (and at a=0 for I > 2), so plain
    Newton stalls near the endpoints.  Vectorized over p.
    """
    i = _check_count(n_bidders)
    p = _check_unit(p, "p")
    scalar = p.ndim == 0
    p = np.atleast_1d(p).astype(float)

    lo = np.zeros_like(p)
    hi = np.ones_like(p)
    a = np.clip(p, 0.0, 1.0)  # decent start: phi(a) ~ a in the middle
    for _ in range(max_iter):
        f = i * a ** (i - 1) - (i - 1) * a**i - p
        done = np.abs(f) <= tol
        if done.all():
            break
        hi = np.where(f > 0, a, hi)
        lo = np.where(f <= 0, a, lo)
        d = i * (i - 1) * a ** (i - 2) * (1.0 - a)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(d > 0, f / np.where(d > 0, d, 1.0), 0.0)
        a_new = a - step
        bad = (a_new <= lo) | (a_new >= hi) | (d <= 0)
        a = np.where(bad, 0.5 * (lo + hi), a_new)
    a = np.where(p <= 0.0, 0.0, np.where(p >= 1.0, 1.0, a))
    return float(a[0]) if scalar else a


@lru_cache(maxsize=None)
def _bell_terms(j, k):
    """Partial Bell polynomial B_{j,k} as ((coefficient, powers), ...).

    powers[i] is the exponent of x_{i+1}; coefficient is the integer
    j! / (prod m_i! (i!)^{m_i}) over partitions of j into k parts.
    """
    terms = []

    def rec(remaining, parts_left, max_part, counts):
        if parts_left == 0:
            if remaining == 0:
                coef = math.factorial(j)
                for size, mult in counts.items():
                    coef //= math.factorial(mult) * math.factorial(size) ** mult
                powers = tuple(counts.get(i + 1, 0) for i in range(j - k + 1))
                terms.append((coef, powers))
            return
        # partition sizes chosen nonincreasing to avoid duplicates
        for size in range(min(max_part, remaining - (parts_left - 1)), 0, -1):
            counts[size] = counts.get(size, 0) + 1
            rec(remaining - size, parts_left - 1, size, counts)
            counts[size] -= 1
            if counts[size] == 0:
                del counts[size]

    rec(j, k, j - k + 1, {})
    return tuple(terms)


def bell_partial(j, k, x):
    """Evaluate the partial (incomplete) Bell polynomial B_{j,k}(x_1,...)."""
    total = 0.0
    for coef, powers in _bell_terms(j, k):
        term = float(coef)
        for xi, e in zip(x, powers):
            if e:
                term *= xi**e
        total += term
    return total

def bell_compose(j, inner_derivs, outer_derivs):
    """j-th derivative of the composition outer(inner(.)) by Faa di Bruno.

    Parameters
    ----------
    j : int
        Derivative order, >= 1.
    inner_derivs : sequence
        inner'(t), inner''(t), ..., at least j entries.
    outer_derivs : sequence
        outer'(u), outer''(u), ..., evaluated at u = inner(t), at least
        j entries.

    Returns sum_k outer^(k) * B_{j,k}(inner', ..., inner^(j-k+1)).
    """
    if int(j) != j or j < 1:
        raise DomainError(f"composition order must be an integer >= 1, got {j!r}")
    j = int(j)
    if len(inner_derivs) < j or len(outer_derivs) < j:
        raise DomainError(f"need at least {j} inner and outer derivatives")
    total = 0.0
    for k in range(1, j + 1):
        total += outer_derivs[k - 1] * bell_partial(j, k, inner_derivs[: j - k + 1])
    return total


# alias used where the chain-rule reading is clearer than the Bell one
compose_deriv = bell_compose

"""Private-value quantile models.

Exposes one surface over three backings:

* ``ValuationModel`` over a bid-rank quantile fit: the value quantile is the
  bid quantile composed with the winning-bid rank link, V(a|x) = B(phi(a)|x);
  derivatives push through by Faa di Bruno, the CDF by inverting both layers.
* ``ValuationModel`` over a value-rank fit (one whose check levels were
  phi-transformed at estimation time): coefficient blocks estimate the value
  quantile and its derivatives directly, no composition.
* ``AnalyticValueModel`` from closed-form coefficient curves, used as ground
  truth in simulations and as analytic stubs in seller/risk tests.

All models share the derived quantities: the hazard-type ratio
(1-F(t))/f(t) = V'(F(t)) (1 - F(t)) and Myerson's virtual valuation
J(t) = t - (1-F(t))/f(t).
"""

from __future__ import annotations

import numpy as np

from .aqr import (
    AqrConfig,
    AqrFit,
    bid_quantile,
    bid_quantile_deriv,
    bid_quantile_inverse,
    generalized_inverse,
    pava,
)
from .errors import DomainError
from .orderstat import bell_compose, phi, phi_deriv, phi_inverse

__all__ = [
    "ValueModelBase",
    "ValuationModel",
    "AnalyticValueModel",
    "LinearQuantileCurves",
    "uniform_value_model",
    "value_fit_config",
]


def interp_rows(grid, curves, queries):
    """Row-wise linear interpolation: curves (n,G) on grid (G,), queries (n,m)."""
    queries = np.asarray(queries, dtype=float)
    idx = np.clip(np.searchsorted(grid, queries), 1, grid.size - 1)
    x0 = grid[idx - 1]
    x1 = grid[idx]
    wgt = (queries - x0) / (x1 - x0)
    rows = np.arange(curves.shape[0])[:, None]
    return curves[rows, idx - 1] * (1.0 - wgt) + curves[rows, idx] * wgt


class ValueModelBase:
    """Shared derived operations; subclasses provide quantile/deriv/cdf."""

    n_bidders: int

    def alpha_bounds(self):
        raise NotImplementedError

    def value_quantile(self, alpha, x=None):
        raise NotImplementedError

    def value_quantile_deriv(self, j, alpha, x=None):
        raise NotImplementedError

    def value_cdf(self, t, x=None):
        raise NotImplementedError

    def value_bounds(self, x=None):
        """Trimmed value range [V(alpha_lo|x), V(alpha_hi|x)]."""
        lo, hi = self.alpha_bounds()
        return (
            float(self.value_quantile(lo, x)),
            float(self.value_quantile(hi, x)),
        )

    def value_quantile_padded(self, alpha, x=None):
        """Quantile with queries clamped into the trimmed rank range.

        Constant extension beyond the grid; used by the expected-utility
        tail integral, where the omitted tail shifts all screening levels
        by the same amount and cannot move the argmax.
        """
        lo, hi = self.alpha_bounds()
        return self.value_quantile(np.clip(alpha, lo, hi), x)

    def value_pdf_ratio(self, t, x=None):
        """(1 - F(t|x)) / f(t|x) computed as V'(F(t|x)|x) (1 - F(t|x))."""
        a = self.value_cdf(t, x)
        return self.value_quantile_deriv(1, a, x) * (1.0 - a)

    def virtual_valuation(self, t, x=None):
        """Myerson's marginal-revenue transform t - (1-F)/f; monotone under IHR."""
        return t - self.value_pdf_ratio(t, x)

    # batch hooks; subclasses override with vectorized versions where it matters
    def value_quantile_batch(self, alphas, xs, padded=False):
        """alphas (n,m) or (m,), xs (n,D) -> (n,m)."""
        alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
        xs = np.atleast_2d(xs)
        if alphas.shape[0] == 1 and xs.shape[0] > 1:
            alphas = np.broadcast_to(alphas, (xs.shape[0], alphas.shape[1]))
        fn = self.value_quantile_padded if padded else self.value_quantile
        return np.array([fn(alphas[i], xs[i]) for i in range(xs.shape[0])])


def value_fit_config(value_grid, n_bidders, **kwargs):
    """AqrConfig whose fit grid covers phi of the requested value-rank grid.

    The estimator V(a|x) = B(phi(a)|x) needs bid-rank solutions at phi(a);
    for value ranks near 0 or 1 those levels fall far outside any standard
    grid, so the fit grid is taken as the phi image of the value grid.
    """
    value_grid = np.asarray(value_grid, dtype=float)
    return AqrConfig(alpha_grid=phi(value_grid, n_bidders), **kwargs)


class ValuationModel(ValueModelBase):
    """Value-quantile view over a fitted AqrFit for one bidder-count stratum."""

    def __init__(self, fit, n_bidders):
        if int(n_bidders) != n_bidders or n_bidders < 2:
            raise DomainError(f"bidder count must be an integer >= 2, got {n_bidders!r}")
        if not isinstance(fit, AqrFit):
            raise DomainError("ValuationModel expects an AqrFit")
        link = getattr(fit.config, "link_bidders", None)
        if link is not None and link != n_bidders:
            raise DomainError(
                f"fit was estimated with a {link}-bidder link, model asks for {n_bidders}"
            )
        self.fit = fit
        self.n_bidders = int(n_bidders)
        self.direct = link is not None
        if self.direct:
            self._alpha_lo = float(fit.alpha_grid[0])
            self._alpha_hi = float(fit.alpha_grid[-1])
        else:
            self._alpha_lo = float(phi_inverse(fit.alpha_grid[0], self.n_bidders))
            self._alpha_hi = float(phi_inverse(fit.alpha_grid[-1], self.n_bidders))

    def alpha_bounds(self):
        return (self._alpha_lo, self._alpha_hi)

    def value_quantile(self, alpha, x=None):
        if self.direct:
            return bid_quantile(self.fit, alpha, x)
        return bid_quantile(self.fit, phi(alpha, self.n_bidders), x)

    def value_quantile_deriv(self, j, alpha, x=None):
        if self.direct:
            return bid_quantile_deriv(self.fit, j, alpha, x)
        u = phi(alpha, self.n_bidders)
        inner = [phi_deriv(alpha, self.n_bidders, k) for k in range(1, j + 1)]
        outer = [bid_quantile_deriv(self.fit, k, u, x) for k in range(1, j + 1)]
        if np.ndim(alpha) == 0:
            return bell_compose(j, inner, outer)
        out = np.empty(np.shape(alpha))
        for i in range(out.size):
            out[i] = bell_compose(j, [d[i] for d in inner], [d[i] for d in outer])
        return out

    def value_cdf(self, t, x=None):
        a = bid_quantile_inverse(self.fit, t, x)
        if self.direct:
            return a
        return phi_inverse(a, self.n_bidders)

    # vectorized per-record machinery used by the risk stage and the seller batch

    def record_curves(self, xs):
        """Monotonized level and clamped first-derivative curves per row of xs."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        x1 = np.column_stack([np.ones(xs.shape[0]), xs])
        levels = x1 @ self.fit.coeffs[:, 0, :].T  # n x G
        levels = np.apply_along_axis(pava, 1, levels)
        deriv1 = x1 @ self.fit.coeffs[:, 1, :].T
        deriv1 = np.maximum(deriv1, self.fit.deriv_floor)
        return levels, deriv1

    def value_quantile_batch(self, alphas, xs, padded=False):
        xs = np.atleast_2d(xs)
        alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
        if alphas.shape[0] == 1 and xs.shape[0] > 1:
            alphas = np.broadcast_to(alphas, (xs.shape[0], alphas.shape[1]))
        grid_q = alphas if self.direct else phi(alphas, self.n_bidders)
        lo, hi = self.fit.alpha_grid[0], self.fit.alpha_grid[-1]
        if padded:
            grid_q = np.clip(grid_q, lo, hi)
        elif np.any(grid_q < lo - 1e-12) or np.any(grid_q > hi + 1e-12):
            raise DomainError("batch quantile query outside the fitted grid")
        levels, _ = self.record_curves(xs)
        return interp_rows(self.fit.alpha_grid, levels, grid_q)

    def stage_two_inputs(self, rs, xs):
        """Per-record (alpha*, hazard-ratio) at prices rs: the FOC plug-ins.

        alpha* = F_hat(r|x); ratio = V_hat'(alpha*|x) (1 - alpha*).  Rows
        whose price falls outside the per-record trimmed value range get
        alpha* = nan (callers trim them).
        """
        rs = np.asarray(rs, dtype=float)
        levels, deriv1 = self.record_curves(xs)
        n = levels.shape[0]
        grid = self.fit.alpha_grid
        alpha_star = np.full(n, np.nan)
        ratio = np.full(n, np.nan)
        inside = (rs >= levels[:, 0]) & (rs <= levels[:, -1])
        for i in np.nonzero(inside)[0]:
            u = generalized_inverse(grid, levels[i], float(rs[i]))
            b1 = float(np.interp(u, grid, deriv1[i]))
            if self.direct:
                a = u
                v1 = b1
            else:
                a = phi_inverse(u, self.n_bidders)
                v1 = phi_deriv(a, self.n_bidders, 1) * b1
            alpha_star[i] = a
            ratio[i] = v1 * (1.0 - a)
        return alpha_star, ratio


class LinearQuantileCurves:
    """Closed-form coefficient curves a -> [g_0(a), g_1(a), ..., g_D(a)].

    funcs[k][j] is the j-th derivative of curve k (j = 0 for the level);
    missing derivatives are rejected at query time.
    """

    def __init__(self, funcs):
        self.funcs = [tuple(f) for f in funcs]
        self.D = len(self.funcs) - 1

    def value(self, j, alpha, x=None):
        alpha = np.asarray(alpha, dtype=float)
        if j >= len(self.funcs[0]):
            raise DomainError(f"curve derivatives available up to order {len(self.funcs[0]) - 1}")
        out = np.asarray(self.funcs[0][j](alpha), dtype=float) * np.ones_like(alpha)
        if self.D:
            x = np.atleast_1d(np.asarray(x, dtype=float))
            for k in range(1, self.D + 1):
                out = out + np.asarray(self.funcs[k][j](alpha), dtype=float) * x[k - 1]
        return out


class AnalyticValueModel(ValueModelBase):
    """Ground-truth value model from closed-form quantile curves."""

    def __init__(self, curves, n_bidders, alpha_lo=0.0, alpha_hi=1.0):
        self.curves = curves
        self.n_bidders = int(n_bidders)
        self._alpha_lo = float(alpha_lo)
        self._alpha_hi = float(alpha_hi)

    def alpha_bounds(self):
        return (self._alpha_lo, self._alpha_hi)

    def value_quantile(self, alpha, x=None):
        out = self.curves.value(0, alpha, x)
        return float(out) if np.ndim(alpha) == 0 else out

    def value_quantile_deriv(self, j, alpha, x=None):
        out = self.curves.value(j, alpha, x)
        return float(out) if np.ndim(alpha) == 0 else out

    def value_cdf(self, t, x=None, tol=1e-13):
        """Bisection solve of V(a|x) = t on the rank interval."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        lo = np.full(t_arr.shape, self._alpha_lo)
        hi = np.full(t_arr.shape, self._alpha_hi)
        v_lo = self.curves.value(0, lo, x)
        v_hi = self.curves.value(0, hi, x)
        out = np.where(t_arr <= v_lo, self._alpha_lo, np.where(t_arr >= v_hi, self._alpha_hi, np.nan))
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            v = self.curves.value(0, mid, x)
            high = v >= t_arr
            hi = np.where(high, mid, hi)
            lo = np.where(high, lo, mid)
            if np.max(hi - lo) < tol:
                break
        mid = 0.5 * (lo + hi)
        out = np.where(np.isnan(out), mid, out)
        return float(out[0]) if np.ndim(t) == 0 else out

    def value_quantile_batch(self, alphas, xs, padded=False):
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
        if alphas.shape[0] == 1 and xs.shape[0] > 1:
            alphas = np.broadcast_to(alphas, (xs.shape[0], alphas.shape[1]))
        if padded:
            alphas = np.clip(alphas, self._alpha_lo, self._alpha_hi)
        out = np.asarray(self.curves.funcs[0][0](alphas), dtype=float) * np.ones_like(alphas)
        for k in range(1, self.curves.D + 1):
            out = out + np.asarray(self.curves.funcs[k][0](alphas), dtype=float) * xs[:, k - 1][:, None]
        return out


def uniform_value_model(lo=0.0, hi=1.0, n_bidders=2):
    """Values uniform on [lo, hi]: V(a) = lo + (hi-lo) a, no covariates."""
    width = hi - lo
    curves = LinearQuantileCurves(
        [(lambda a, lo=lo, w=width: lo + w * a, lambda a, w=width: w * np.ones_like(np.asarray(a, float)), lambda a: np.zeros_like(np.asarray(a, float)), lambda a: np.zeros_like(np.asarray(a, float)))]
    )
    return AnalyticValueModel(curves, n_bidders)

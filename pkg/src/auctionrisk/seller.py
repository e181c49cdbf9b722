"""Seller's reserve-price problem under parametric (CRRA) risk preferences.

Expected utility of screening level a with I bidders and outside value w:

    Pi(a) = U(w) a^I + U(V(a|x)) I a^(I-1) (1 - a)
            + I (I-1) int_a^1 U(V(t|x)) t^(I-2) (1 - t) dt,

equal to the reserve-price parameterization at r = V(a|x).  Its derivative
is I a^(I-1) times the first-order condition

    h(r, w) = U(w) + U'(r) (1 - F(r|x)) / f(r|x) - U(r),

which is strictly decreasing in r under an increasing virtual valuation, so
the optimal reserve is the unique sign change; it falls as risk aversion
rises and climbs with the outside value.  The solver maximizes Pi on the
screening grid and refines by golden section between the neighbours, which
stays robust when fitted models mildly violate the monotonicity assumption;
the FOC residual at the solution is reported as a diagnostic only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .kernels import gauss_legendre
from .valuation import ValueModelBase

__all__ = [
    "crra",
    "crra_theta_derivs",
    "UtilitySpec",
    "SellerProblem",
    "expected_utility",
    "foc_h",
    "optimal_reserve",
    "optimal_reserve_batch",
    "ReserveSolution",
]

_SERIES_CUT = 1e-8  # |1 - theta| below which the log-series branch is used
GOLDEN_RATIO = (np.sqrt(5.0) - 1.0) / 2.0


def crra(theta, v, order=0):
    """Constant-relative-risk-aversion utility and its first three derivatives.

    order 0: (v^(1-theta) - 1)/(1-theta), log v in the theta -> 1 limit,
    evaluated via expm1 for stability; orders 1..3 are the analytic
    derivatives v^-theta, -theta v^(-theta-1), theta (theta+1) v^(-theta-2).
    Requires v > 0 (v = 0 tolerated for order 0 when theta < 1, where the
    utility is finite).
    """
    theta = float(theta)
    v = np.asarray(v, dtype=float)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    if order not in (0, 1, 2, 3):
        raise DomainError(f"derivative order must be 0..3, got {order!r}")
    if np.any(v < 0):
        raise DomainError("CRRA utility requires nonnegative wealth")
    if np.any(v == 0) and (order > 0 or theta >= 1):
        raise DomainError("CRRA utility at zero wealth is defined only for order 0, theta < 1")
    if order == 0:
        sigma = 1.0 - theta
        with np.errstate(divide="ignore"):
            logv = np.where(v > 0, np.log(np.where(v > 0, v, 1.0)), 0.0)
        if abs(sigma) < _SERIES_CUT:
            out = logv * (1.0 + sigma * logv / 2.0 + sigma * sigma * logv * logv / 6.0)
        else:
            out = np.where(v > 0, np.expm1(sigma * logv) / sigma, -1.0 / sigma)
    elif order == 1:
        out = v**-theta
    elif order == 2:
        out = -theta * v ** (-theta - 1.0)
    else:
        out = theta * (theta + 1.0) * v ** (-theta - 2.0)
    return float(out[0]) if scalar else out


def _exp_ratio_derivs(sigma, x):
    """E = expm1(sigma x)/sigma and its first two sigma-derivatives.

    Series branch for small |sigma x| kills the cancellation in the
    closed forms; x is log wealth.
    """
    x = np.asarray(x, dtype=float)
    small = np.abs(sigma * x) < 1e-4
    if sigma == 0.0:
        e0 = x.copy()
        e1 = x * x / 2.0
        e2 = x**3 / 3.0
        return e0, e1, e2
    ex = np.exp(sigma * x)
    em1 = np.expm1(sigma * x)
    with np.errstate(invalid="ignore"):
        e0 = np.where(small, x * (1.0 + sigma * x / 2.0 + (sigma * x) ** 2 / 6.0), em1 / sigma)
        e1 = np.where(
            small,
            x * x * (0.5 + sigma * x / 3.0 + (sigma * x) ** 2 / 8.0),
            (sigma * x * ex - em1) / sigma**2,
        )
        e2 = np.where(
            small,
            x**3 * (1.0 / 3.0 + sigma * x / 4.0 + (sigma * x) ** 2 / 10.0),
            (sigma**2 * x * x * ex - 2.0 * sigma * x * ex + 2.0 * em1) / sigma**3,
        )
    return e0, e1, e2


def crra_theta_derivs(theta, v):
    """(U, dU/dtheta, d2U/dtheta2) of CRRA utility at wealth v > 0."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise DomainError("theta-derivatives of CRRA require positive wealth")
    x = np.log(v)
    e0, e1, e2 = _exp_ratio_derivs(1.0 - float(theta), x)
    return e0, -e1, e2


@dataclass(frozen=True)
class UtilitySpec:
    """Parametric utility family; only CRRA ships."""

    theta: float
    family: str = "crra"

    def __post_init__(self):
        if self.family != "crra":
            raise DomainError(f"unsupported utility family {self.family!r}")

    def __call__(self, v, order=0):
        return crra(self.theta, v, order)


@dataclass
class SellerProblem:
    """One seller's reserve decision over a value model at covariates x.

    The outside value is clamped into the model's trimmed value range when
    it falls outside (flagged in ``w_clamped``); theory places it inside
    the value support, but empirical constructions can violate that.
    """

    model: ValueModelBase
    x: object
    w: float
    utility: UtilitySpec
    alpha_grid: np.ndarray = None
    w_clamped: bool = field(init=False, default=False)

    def __post_init__(self):
        v_lo, v_hi = self.model.value_bounds(self.x)
        if not (v_lo <= self.w <= v_hi):
            self.w_clamped = True
            self.w = float(np.clip(self.w, v_lo, v_hi))
        if self.alpha_grid is None:
            lo, hi = self.model.alpha_bounds()
            grid = np.round(np.arange(1, 100) * 0.01, 10)
            self.alpha_grid = grid[(grid >= lo) & (grid <= hi)]
            if self.alpha_grid.size < 3:
                self.alpha_grid = np.linspace(lo, hi, 99)

    @property
    def n_bidders(self):
        return self.model.n_bidders


def _tail_weight(t, n_bidders):
    return t ** (n_bidders - 2) * (1.0 - t)


_TAIL_PANELS = 2
_TAIL_ORDER = 32  # 2 x 32 = 64 composite Gauss-Legendre nodes on [a, 1]


def _tail_nodes(alpha):
    """Composite Gauss-Legendre nodes/weights on [alpha, 1], alpha (n,) -> (n, 64)."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    rule = gauss_legendre(_TAIL_ORDER)
    cuts = np.linspace(0.0, 1.0, _TAIL_PANELS + 1)
    nodes, weights = [], []
    for k in range(_TAIL_PANELS):
        seg_lo = alpha + (1.0 - alpha) * cuts[k]
        seg_hi = alpha + (1.0 - alpha) * cuts[k + 1]
        half = 0.5 * (seg_hi - seg_lo)
        mid = 0.5 * (seg_hi + seg_lo)
        nodes.append(mid[:, None] + half[:, None] * rule.nodes)
        weights.append(half[:, None] * rule.weights)
    return np.concatenate(nodes, axis=1), np.concatenate(weights, axis=1)


def expected_utility(problem, alpha):
    """Seller's expected utility of screening level(s) alpha."""
    model, x, util, i_cnt = problem.model, problem.x, problem.utility, problem.n_bidders
    alpha_arr = np.atleast_1d(np.asarray(alpha, dtype=float))
    uw = util(problem.w)
    v_at = model.value_quantile_padded(alpha_arr, x)
    head = uw * alpha_arr**i_cnt + util(v_at) * i_cnt * alpha_arr ** (i_cnt - 1) * (1.0 - alpha_arr)
    nodes, weights = _tail_nodes(alpha_arr)
    vals = model.value_quantile_padded(nodes.ravel(), x).reshape(nodes.shape)
    tail = (util(vals.ravel()).reshape(nodes.shape) * _tail_weight(nodes, i_cnt) * weights).sum(axis=1)
    out = head + i_cnt * (i_cnt - 1) * tail
    return float(out[0]) if np.ndim(alpha) == 0 else out


def foc_h(problem, r):
    """First-order-condition residual U(w) + U'(r)(1-F)/f - U(r) at price r."""
    util = problem.utility
    ratio = problem.model.value_pdf_ratio(r, problem.x)
    return util(problem.w) + util(r, 1) * ratio - util(r)


@dataclass(frozen=True)
class ReserveSolution:
    alpha_R: float
    reserve: float
    attained_utility: float
    foc_residual: float
    boundary: bool


def optimal_reserve(problem):
    """Grid argmax of expected utility refined by golden-section search."""
    grid = np.asarray(problem.alpha_grid, dtype=float)
    pi_vals = expected_utility(problem, grid)
    if np.all(np.isnan(pi_vals)):
        raise DomainError("expected utility is NaN on the whole screening grid")
    g = int(np.nanargmax(pi_vals))
    lo = grid[max(g - 1, 0)]
    hi = grid[min(g + 1, grid.size - 1)]
    boundary = g == 0 or g == grid.size - 1
    if hi > lo:
        a_star = _golden_max(lambda a: expected_utility(problem, float(a)), lo, hi)
    else:
        a_star = grid[g]
    reserve = float(problem.model.value_quantile_padded(a_star, problem.x))
    v_lo, v_hi = problem.model.value_bounds(problem.x)
    foc = foc_h(problem, reserve) if v_lo < reserve < v_hi else np.nan
    return ReserveSolution(
        alpha_R=float(a_star),
        reserve=reserve,
        attained_utility=float(expected_utility(problem, float(a_star))),
        foc_residual=float(foc),
        boundary=bool(boundary),
    )


def _golden_max(f, lo, hi, tol=1e-12, max_iter=120):
    x1 = hi - GOLDEN_RATIO * (hi - lo)
    x2 = lo + GOLDEN_RATIO * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN_RATIO * (hi - lo)
            f2 = f(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN_RATIO * (hi - lo)
            f1 = f(x1)
    return 0.5 * (lo + hi)


def _expected_utility_rows(model, xs, ws, utility, alphas):
    """Pi for record rows at per-row screening levels; alphas (n,) or (n,m)."""
    xs = np.atleast_2d(xs)
    n = xs.shape[0]
    alphas = np.asarray(alphas, dtype=float)
    squeeze = alphas.ndim == 1
    a = alphas[:, None] if squeeze else alphas
    i_cnt = model.n_bidders
    uw = utility(ws)[:, None] if np.ndim(ws) else utility(float(ws)) * np.ones((n, 1))
    v_at = model.value_quantile_batch(a, xs, padded=True)
    head = uw * a**i_cnt + utility(v_at.ravel()).reshape(a.shape) * i_cnt * a ** (i_cnt - 1) * (1.0 - a)
    out = np.empty_like(a)
    for col in range(a.shape[1]):
        nodes, weights = _tail_nodes(a[:, col])
        vals = model.value_quantile_batch(nodes, xs, padded=True)
        tail = (utility(vals.ravel()).reshape(nodes.shape) * _tail_weight(nodes, i_cnt) * weights).sum(axis=1)
        out[:, col] = head[:, col] + i_cnt * (i_cnt - 1) * tail
    return out[:, 0] if squeeze else out


def optimal_reserve_batch(model, xs, ws, utility, alpha_grid, golden_iters=80):
    """Vectorized grid + golden-section reserve solve over records.

    Returns (alpha_R, reserve) arrays.  All records share the screening
    grid; the golden refinement runs in lockstep with per-record brackets.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ws = np.asarray(ws, dtype=float)
    n = xs.shape[0]
    lo_hi = model.alpha_bounds()
    bounds = model.value_quantile_batch(np.array([[lo_hi[0], lo_hi[1]]]), xs, padded=True)
    ws = np.clip(ws, bounds[:, 0], bounds[:, 1])
    grid = np.asarray(alpha_grid, dtype=float)
    pi_grid = _expected_utility_rows(model, xs, ws, utility, np.broadcast_to(grid, (n, grid.size)))
    g = np.argmax(pi_grid, axis=1)
    lo = grid[np.maximum(g - 1, 0)]
    hi = grid[np.minimum(g + 1, grid.size - 1)]
    x1 = hi - GOLDEN_RATIO * (hi - lo)
    x2 = lo + GOLDEN_RATIO * (hi - lo)
    f1 = _expected_utility_rows(model, xs, ws, utility, x1)
    f2 = _expected_utility_rows(model, xs, ws, utility, x2)
    for _ in range(golden_iters):
        go_right = f1 < f2  # maximum lies in [x1, hi]
        old_x1, old_x2, old_f1, old_f2 = x1, x2, f1, f2
        lo = np.where(go_right, old_x1, lo)
        hi = np.where(go_right, hi, old_x2)
        x1 = np.where(go_right, old_x2, hi - GOLDEN_RATIO * (hi - lo))
        x2 = np.where(go_right, lo + GOLDEN_RATIO * (hi - lo), old_x1)
        probe = np.where(go_right, x2, x1)
        f_probe = _expected_utility_rows(model, xs, ws, utility, probe)
        f1 = np.where(go_right, old_f2, f_probe)
        f2 = np.where(go_right, f_probe, old_f1)
    alpha_r = 0.5 * (lo + hi)
    reserve = model.value_quantile_batch(alpha_r[:, None], xs, padded=True)[:, 0]
    return alpha_r, reserve

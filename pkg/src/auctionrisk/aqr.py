"""Kernel-augmented quantile regression of winning bids.

For each grid level a the stacked coefficient vector b minimizes

    (1/L) sum_l  int  rho_{a+th}( B_l - P(X_l, th)' b ) K(t) dt,

where rho_u(t) = t (u - 1[t<0]) is the check loss, P(x, t) = pi(t) kron
[1, x'], and the integral runs over the kernel-truncated range
[max(-1, -a/h), min(1, (1-a)/h)].  The first block of b estimates the
conditional bid-quantile coefficients at level a, block j its j-th
derivative in a.

Numerics.  The integral is discretized on Gauss-Legendre nodes, turning the
problem into a finite weighted multi-level check regression.  That convex
piecewise-linear objective is minimized by smoothing the check kink with a
quadratic zone of half-width eps and shrinking eps over L-BFGS restarts;
solutions chain along the level grid as warm starts.  Internally the solve
runs in rescaled coordinates (block j multiplied by h^j) so the design stays
well conditioned for small h.  An exact (adaptively kink-split) evaluation of
the objective and its subgradient is provided for verification against
independent oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .data import AuctionDataset
from .errors import ConvergenceError, DomainError, RangeError, SingularDesignError
from .kernels import EPANECHNIKOV, KernelSpec, PolyBasis, gauss_legendre
from .orderstat import phi

__all__ = [
    "AqrConfig",
    "AqrFit",
    "fit_aqr",
    "fit_aqr_by_stratum",
    "aqr_objective",
    "aqr_objective_discretized",
    "aqr_subgradient",
    "bid_quantile",
    "bid_quantile_deriv",
    "bid_quantile_inverse",
    "rule_of_thumb_bandwidth",
    "pava",
]

DERIV_FLOOR_REL = 1e-8  # positivity floor for the level-1 derivative, times bid scale


def rule_of_thumb_bandwidth(bids, power):
    """s_B * L^(-1/power) with s_B the winning-bid sample std (power 5, 6, or 7)."""
    bids = np.asarray(bids, dtype=float)
    if power not in (5, 6, 7):
        raise DomainError(f"bandwidth rule power must be 5, 6 or 7, got {power!r}")
    if bids.size < 2:
        raise DomainError("need at least two bids for the bandwidth rule")
    return float(np.std(bids, ddof=1) * bids.size ** (-1.0 / power))


@dataclass(frozen=True)
class AqrConfig:
    """Estimation settings for one quantile-regression fit.

    With ``link_bidders`` set, the fit runs in value-rank space for an
    ascending auction with that many bidders: the local polynomial is in
    the value rank a and the check level is the winning-bid rank phi(a),
    so coefficient block j estimates the j-th derivative of the value
    quantile directly.  With it unset (default), levels are the raw
    a + t h and the fit lives in bid-rank space.
    """

    h: float
    s: int = 2
    alpha_grid: np.ndarray = field(
        default_factory=lambda: np.round(np.arange(1, 100) * 0.01, 10)
    )
    kernel: KernelSpec = EPANECHNIKOV
    quad_order: int = 33
    smoothing_schedule: tuple = (1e-2, 1e-4, 1e-6)
    grad_tol: float = 1e-9
    max_iter: int = 500
    covariate_bounds: tuple | None = None  # ((lo, hi), ...) per covariate; default data hull
    link_bidders: int | None = None

    def __post_init__(self):
        if not (self.h > 0):
            raise DomainError(f"bandwidth must be positive, got {self.h!r}")
        if int(self.s) != self.s or self.s < 0:
            raise DomainError(f"polynomial order must be an integer >= 0, got {self.s!r}")
        grid = np.asarray(self.alpha_grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise DomainError("alpha grid must be a 1-d array with at least two points")
        if np.any(np.diff(grid) <= 0):
            raise DomainError("alpha grid must be strictly increasing")
        if grid[0] <= 0.0 or grid[-1] >= 1.0:
            raise DomainError("alpha grid must lie strictly inside (0, 1)")
        object.__setattr__(self, "alpha_grid", grid)
        if self.quad_order < 2:
            raise DomainError("quadrature order must be >= 2")
        if not self.smoothing_schedule or any(e <= 0 for e in self.smoothing_schedule):
            raise DomainError("smoothing schedule must be positive")
        if self.link_bidders is not None and (
            int(self.link_bidders) != self.link_bidders or self.link_bidders < 2
        ):
            raise DomainError(f"link bidder count must be an integer >= 2, got {self.link_bidders!r}")


def _trunc_range(alpha, h):
    lo = max(-1.0, -alpha / h)
    hi = min(1.0, (1.0 - alpha) / h)
    if not lo < hi:
        raise DomainError(f"empty integration range at alpha={alpha}, h={h}")
    return lo, hi


def _level_nodes(alpha, cfg):
    """Quadrature nodes/levels for one grid level: (t, omega, levels, Pi)."""
    lo, hi = _trunc_range(alpha, cfg.h)
    rule = gauss_legendre(cfg.quad_order)
    t, w = rule.mapped(lo, hi)
    omega = w * cfg.kernel(t)
    levels = alpha + cfg.h * t
    if cfg.link_bidders is not None:
        levels = phi(np.clip(levels, 0.0, 1.0), cfg.link_bidders)
    basis = PolyBasis(cfg.s) if cfg.s >= 1 else None
    if basis is None:
        pi_mat = np.ones((t.size, 1))
    else:
        pi_mat = basis.pi(t)
    return t, omega, levels, pi_mat


def _smoothed_obj_grad_numpy(bmat_flat, bids, x1, pi_mat, omega, levels, eps, inv_l):
    """Value and gradient of the eps-smoothed discretized objective.

    bmat_flat is the rescaled coefficient vector laid out as an
    (s+1, D+1) matrix in row-major order.
    """
    n_blocks = pi_mat.shape[1]
    bmat = bmat_flat.reshape(n_blocks, -1)
    curve = x1 @ bmat.T  # L x (s+1): per-record polynomial coefficients
    resid = bids[:, None] - curve @ pi_mat.T  # L x K
    absr = np.abs(resid)
    quad = absr <= eps
    # huber smoothing of |t|: t^2/(2 eps) + eps/2 inside the quadratic zone
    hub = np.where(quad, resid * resid / (2.0 * eps) + 0.5 * eps, absr)
    shifted = levels - 0.5
    val = inv_l * float((resid * shifted + 0.5 * hub).sum(axis=0) @ omega)
    drho = shifted + 0.5 * np.clip(resid / eps, -1.0, 1.0)
    t_mat = drho * omega  # L x K
    grad = -inv_l * (x1.T @ (t_mat @ pi_mat)).T
    return val, grad.ravel()


try:  # single-pass fused version; numpy path above is the reference
    from numba import njit as _njit

    @_njit(cache=True)
    def _smoothed_obj_grad_jit(bmat_flat, bids, x1, pi_mat, omega, levels, eps, inv_l):
        n_obs, d1 = x1.shape
        n_nodes, n_blocks = pi_mat.shape
        bmat = bmat_flat.reshape(n_blocks, d1)
        val = 0.0
        grad = np.zeros((n_blocks, d1))
        coef = np.zeros(n_blocks)
        t_row = np.zeros(n_nodes)
        for l in range(n_obs):
            for j in range(n_blocks):
                acc = 0.0
                for d in range(d1):
                    acc += x1[l, d] * bmat[j, d]
                coef[j] = acc
            for k in range(n_nodes):
                fitted = 0.0
                for j in range(n_blocks):
                    fitted += coef[j] * pi_mat[k, j]
                r = bids[l] - fitted

                shifted = levels[k] - 0.5
                if r > eps:
                    hub = r
                    clip = 1.0
                elif r < -eps:
                    hub = -r
                    clip = -1.0
                else:
                    hub = r * r / (2.0 * eps) + 0.5 * eps
                    clip = r / eps
                val += omega[k] * (shifted * r + 0.5 * hub)
                t_row[k] = omega[k] * (shifted + 0.5 * clip)
            for j in range(n_blocks):
                acc = 0.0
                for k in range(n_nodes):
                    acc += t_row[k] * pi_mat[k, j]
                for d in range(d1):
                    grad[j, d] -= acc * x1[l, d]
        return val * inv_l, grad.ravel() * inv_l

    def _smoothed_obj_grad(bmat_flat, bids, x1, pi_mat, omega, levels, eps, inv_l):
        return _smoothed_obj_grad_jit(
            np.ascontiguousarray(bmat_flat), bids, x1, pi_mat, omega, levels, eps, inv_l
        )

except ImportError:  # pragma: no cover - numba is an optional accelerator
    _smoothed_obj_grad = _smoothed_obj_grad_numpy


class _StageResult:
    def __init__(self, x, fun, jac, success, message):
        self.x = x
        self.fun = fun
        self.jac = jac
        self.success = success
        self.message = message


def _zone_entry_step(b, g, resid, eps, x1, pi_mat):
    """Step along -g that lands inside the nearest check-kink zone.

    Away from every quadratic zone the objective is linear, so descent along
    the gradient is exact until some residual reaches +-eps; returns that
    distance (plus half a zone width) or None when no crossing lies ahead.
    """
    n_blocks = pi_mat.shape[1]
    gmat = (-g).reshape(n_blocks, -1)
    rate = (x1 @ gmat.T) @ pi_mat.T  # d residual / d t along -g, negated sign below
    # residual moves as r - t * rate
    cands = []
    for target in (eps, -eps):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (resid - target) / rate
        t = t[np.isfinite(t) & (t > 1e-14)]
        if t.size:
            cands.append(np.min(t))
    if not cands:
        return None
    t_star = min(cands)
    max_rate = np.max(np.abs(rate))
    pad = 0.5 * eps / max_rate if max_rate > 0 else 0.0
    return t_star + pad


def _newton_stage(b, args, gtol, trust_init, max_iter=80):
    """Trust-capped Newton on the eps-smoothed objective.

    The surface is piecewise quadratic: the Hessian is the cross-product of
    the design rows whose residuals sit inside the quadratic zone, so each
    step jumps to (or toward) the local piece's minimizer.  In locally
    linear territory (no active rows, or a rank-deficient active set with
    the gradient outside its span) a gradient hop walks to the nearest
    zone boundary instead.  Fast exactly where L-BFGS crawls (tiny eps).
    """
    bids, x1, pi_mat, omega, levels, eps, inv_l = args
    dim = b.size
    n_blocks = pi_mat.shape[1]
    trust = trust_init
    f, g = _smoothed_obj_grad(b, bids, x1, pi_mat, omega, levels, eps, inv_l)
    for _ in range(max_iter):
        gnorm = np.max(np.abs(g))
        if gnorm <= gtol:
            return _StageResult(b, f, g, True, "newton: gradient tolerance")
        bmat = b.reshape(n_blocks, -1)
        resid = bids[:, None] - (x1 @ bmat.T) @ pi_mat.T
        rows_l, rows_k = np.nonzero(np.abs(resid) <= eps)
        direction = None
        if rows_l.size:
            design = (pi_mat[rows_k][:, :, None] * x1[rows_l][:, None, :]).reshape(rows_l.size, dim)
            wts = omega[rows_k] * (inv_l / (2.0 * eps))
            hess = (design * wts[:, None]).T @ design
            # range-space step: a rank-deficient active set must not amplify
            # numerically-zero gradient components into garbage directions
            direction = np.linalg.lstsq(hess, -g, rcond=1e-9)[0]
            if float(np.linalg.norm(direction)) <= 1e-12 * max(1.0, float(np.linalg.norm(b))):
                direction = None
        if direction is None:
            hop = _zone_entry_step(b, g, resid, eps, x1, pi_mat)
            if hop is None:
                return _StageResult(b, f, g, gnorm <= 1e2 * gtol, "newton: no descent target")
            direction = -hop * g
        norm = float(np.linalg.norm(direction))
        if norm > trust:
            direction *= trust / norm
        step = 1.0
        improved = False
        for _ in range(12):
            cand = b + step * direction
            cf, cg = _smoothed_obj_grad(cand, bids, x1, pi_mat, omega, levels, eps, inv_l)
            if cf < f:
                b, f, g = cand, cf, cg
                improved = True
                break
            step *= 0.25
        if not improved:
            return _StageResult(b, f, g, np.max(np.abs(g)) <= 1e2 * gtol, "newton: stalled")
        if step == 1.0 and norm >= trust:
            trust *= 2.0
        elif step < 0.1:
            trust = max(trust * 0.25, 1e-12)
    return _StageResult(b, f, g, np.max(np.abs(g)) <= 1e2 * gtol, "newton: iteration cap")


def _run_lbfgs(b, args, gtol, maxiter):
    res = minimize(
        _smoothed_obj_grad,
        b,
        args=args,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": maxiter, "ftol": 1e-16, "gtol": gtol, "maxls": 60},
    )
    return _StageResult(res.x, res.fun, res.jac, res.success, str(res.message))


def _lbfgs_chain(fun_args, b0, eps_schedule, gtol, maxiter):
    """Pure L-BFGS continuation over the smoothing schedule: slow but sure."""
    bids, x1, pi_mat, omega, levels, inv_l = fun_args
    b = b0
    last = None
    for eps in eps_schedule:
        last = _run_lbfgs(b, (bids, x1, pi_mat, omega, levels, eps, inv_l), gtol, maxiter)
        b = last.x
    return b, last


def _lbfgs(fun_args, b0, eps_schedule, gtol, maxiter, scale=1.0, globalize=False):
    """fun_args = (bids, x1, pi_mat, omega, levels, inv_l); eps appended per stage.

    Warm-started solves run the Newton stages directly; a cold start (or a
    stalled Newton stage) is globalized by L-BFGS first.  A chain that ends
    away from tolerance is redone with the pure L-BFGS continuation, which
    converges unconditionally on this convex objective.
    """
    bids, x1, pi_mat, omega, levels, inv_l = fun_args
    trust0 = 0.5 * (scale + 1e-12)
    b = b0
    last = None
    final = len(eps_schedule) - 1
    for i, eps in enumerate(eps_schedule):
        args = (bids, x1, pi_mat, omega, levels, eps, inv_l)
        if globalize and i == 0:
            last = _run_lbfgs(b, args, gtol, maxiter)
            b = last.x
        last = _newton_stage(b, args, gtol, trust0)
        b = last.x
        # intermediate stages are continuation steps; only the final stage
        # must converge, with an L-BFGS rescue if Newton stalls early
        if i == final and not last.success:
            rescue = _run_lbfgs(b, args, gtol, maxiter)
            if rescue.fun <= last.fun:
                last = rescue
                b = last.x
            polish = _newton_stage(b, args, gtol, trust0, max_iter=30)
            if polish.fun <= last.fun:
                last = polish
                b = last.x
    if not last.success and np.max(np.abs(last.jac)) > 1e-5 * max(scale, 1.0):
        b_slow, slow = _lbfgs_chain(fun_args, b0, eps_schedule, gtol, maxiter)
        if slow.fun <= last.fun:
            return b_slow, slow
    return b, last


@dataclass(frozen=True)
class AqrFit:
    """Fitted coefficient curves over the level grid.

    coeffs has shape (G, s+1, D+1): entry [g, j, :] is the estimated j-th
    derivative of the bid-quantile coefficient vector at alpha_grid[g], in
    the original (unscaled) parameterization.
    """

    alpha_grid: np.ndarray
    coeffs: np.ndarray
    config: AqrConfig
    scale: float
    x_bounds: np.ndarray  # (D, 2) covariate hull used for query validation
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_mono_cache", {})

    @property
    def s(self):
        return self.coeffs.shape[1] - 1

    @property
    def D(self):
        return self.coeffs.shape[2] - 1

    @property
    def deriv_floor(self):
        return DERIV_FLOOR_REL * max(self.scale, 1e-300)

    def _x1(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size != self.D:
            raise DomainError(f"expected {self.D} covariates, got {x.size}")
        if self.x_bounds.size:
            lo, hi = self.x_bounds[:, 0], self.x_bounds[:, 1]
            slack = 1e-9 * np.maximum(1.0, np.abs(hi - lo))
            if np.any(x < lo - slack) or np.any(x > hi + slack):
                raise DomainError(f"covariates {x} outside configured bounds {self.x_bounds.tolist()}")
        return np.concatenate([[1.0], x])

    def level_curve(self, x, monotone=True):
        """Grid values of the bid quantile at covariates x (monotonized by default)."""
        x1 = self._x1(x)
        if not monotone:
            return self.coeffs[:, 0, :] @ x1
        key = x1.tobytes()
        cache = self._mono_cache
        if key not in cache:
            cache[key] = pava(self.coeffs[:, 0, :] @ x1)
        return cache[key]

    def deriv_curve(self, x, j):
        if int(j) != j or j < 1 or j > self.s:
            raise DomainError(f"derivative order must be in 1..{self.s}, got {j!r}")
        vals = self.coeffs[:, int(j), :] @ self._x1(x)
        if j == 1:
            vals = np.maximum(vals, self.deriv_floor)
        return vals


def pava(values):
    """Pool-adjacent-violators projection onto nondecreasing sequences (L2)."""
    values = np.asarray(values, dtype=float)
    n = values.size
    means = values.copy()
    counts = np.ones(n)
    m = 0  # blocks live in means[:m+1]
    for i in range(n):
        if i > 0:
            m += 1
        means[m] = values[i]
        counts[m] = 1.0
        while m > 0 and means[m - 1] > means[m]:
            tot = counts[m - 1] + counts[m]
            means[m - 1] = (counts[m - 1] * means[m - 1] + counts[m] * means[m]) / tot
            counts[m - 1] = tot
            m -= 1
    return np.repeat(means[: m + 1], counts[: m + 1].astype(int))


def _classical_qr_start(bids, x1, alpha, scale, cfg):
    """Smoothed single-level check regression: warm start for the first grid level."""
    beta0 = np.linalg.lstsq(x1, bids, rcond=None)[0]
    pi_mat = np.ones((1, 1))
    omega = np.ones(1)
    levels = np.array([alpha])
    args = (bids, x1, pi_mat, omega, levels, 1.0 / bids.size)
    schedule = [e * scale for e in cfg.smoothing_schedule]
    beta, _ = _lbfgs(args, beta0, schedule, cfg.grad_tol * max(scale, 1.0), cfg.max_iter, scale, globalize=True)
    return beta


def fit_aqr(data, cfg):
    """Fit the coefficient curves on cfg.alpha_grid.

    Requires a fixed bidder count within the dataset (stratify first when
    counts vary) and at least (s+1)(D+1) observations with a full-rank
    covariate design.  Deterministic given (data, cfg).
    """
    if not isinstance(data, AuctionDataset):
        raise DomainError("fit_aqr expects an AuctionDataset")
    if len(set(data.I.tolist())) != 1:
        raise DomainError(
            "mixed bidder counts in one fit; use fit_aqr_by_stratum to stratify"
        )
    x1 = data.X1
    dim = (cfg.s + 1) * (data.D + 1)
    if data.L < dim:
        raise SingularDesignError(f"need at least {dim} auctions, got {data.L}")
    if np.linalg.matrix_rank(x1) < data.D + 1:
        raise SingularDesignError("covariate design is rank deficient")

    bids = data.B
    scale = float(np.std(bids))
    if scale == 0.0:
        scale = max(1.0, abs(float(bids[0])))
    grid = cfg.alpha_grid
    n_blocks = cfg.s + 1
    coeffs = np.empty((grid.size, n_blocks, data.D + 1))
    h_powers = cfg.h ** np.arange(n_blocks)
    inv_l = 1.0 / data.L
    gtol = cfg.grad_tol * max(scale, 1.0)
    schedule = [e * scale for e in cfg.smoothing_schedule]

    b = np.zeros(dim)
    b[: data.D + 1] = _classical_qr_start(bids, x1, grid[0], scale, cfg)
    # the coarse smoothing stages only globalize; warm-started levels skip them
    schedule_warm = schedule[1:] if len(schedule) > 1 else schedule
    obj_vals = np.empty(grid.size)
    grad_norms = np.empty(grid.size)
    for g, alpha in enumerate(grid):
        _, omega, levels, pi_mat = _level_nodes(alpha, cfg)
        args = (bids, x1, pi_mat, omega, levels, inv_l)
        b, result = _lbfgs(
            args, b, schedule if g == 0 else schedule_warm, gtol, cfg.max_iter, scale,
            globalize=(g == 0),
        )
        gnorm = float(np.max(np.abs(result.jac)))
        # line searches stall at float resolution near the kinked optimum
        # (ABNORMAL status) while the iterate is already optimal; only a
        # genuinely large residual gradient marks a failed solve
        if not result.success and gnorm > 1e-4 * max(scale, 1.0):
            raise ConvergenceError(
                f"AQR solver failed at alpha={alpha:.6g}: {result.message}",
                alpha=float(alpha),
                last_iterate=b / np.repeat(h_powers, data.D + 1),
            )
        obj_vals[g] = result.fun
        grad_norms[g] = gnorm
        coeffs[g] = b.reshape(n_blocks, data.D + 1) / h_powers[:, None]

    if cfg.covariate_bounds is not None:
        x_bounds = np.asarray(cfg.covariate_bounds, dtype=float).reshape(data.D, 2)
    elif data.D:
        x_bounds = np.column_stack([data.X.min(axis=0), data.X.max(axis=0)])
    else:
        x_bounds = np.empty((0, 2))
    return AqrFit(
        alpha_grid=grid,
        coeffs=coeffs,
        config=cfg,
        scale=scale,
        x_bounds=x_bounds,
        diagnostics={"objective": obj_vals, "grad_norm": grad_norms},
    )


def refit_warm(data, cfg, start_fit):
    """Refit on new data reusing a previous fit as per-level warm starts.

    Runs only the final smoothing stage; used by the bootstrap where the
    resampled objective is a small perturbation of the original one.
    """
    x1 = data.X1
    bids = data.B
    if np.linalg.matrix_rank(x1) < data.D + 1:
        raise SingularDesignError("covariate design is rank deficient")
    scale = float(np.std(bids))
    if scale == 0.0:
        scale = max(1.0, abs(float(bids[0])))
    grid = cfg.alpha_grid
    n_blocks = cfg.s + 1
    h_powers = cfg.h ** np.arange(n_blocks)
    coeffs = np.empty_like(start_fit.coeffs)
    inv_l = 1.0 / data.L
    gtol = cfg.grad_tol * max(scale, 1.0)
    eps_final = [cfg.smoothing_schedule[-1] * scale]
    for g, alpha in enumerate(grid):
        _, omega, levels, pi_mat = _level_nodes(alpha, cfg)
        args = (bids, x1, pi_mat, omega, levels, inv_l)
        b0 = (start_fit.coeffs[g] * h_powers[:, None]).ravel()
        b, _ = _lbfgs(args, b0, eps_final, gtol, cfg.max_iter, scale)
        coeffs[g] = b.reshape(n_blocks, data.D + 1) / h_powers[:, None]
    return AqrFit(
        alpha_grid=grid,
        coeffs=coeffs,
        config=cfg,
        scale=scale,
        x_bounds=start_fit.x_bounds,
        diagnostics={},
    )


def fit_aqr_by_stratum(data, cfg, min_stratum=None):
    """One fit per distinct bidder count; strata too small to fit are skipped.

    Returns (fits, skipped) where fits maps bidder count -> AqrFit.
    """
    fits = {}
    skipped = {}
    floor = min_stratum if min_stratum is not None else (cfg.s + 1) * (data.D + 1)
    for count in data.bidder_counts():
        sub = data.stratum(count)
        if sub.L < floor:
            skipped[count] = sub.L
            continue
        try:
            fits[count] = fit_aqr(sub, cfg)
        except SingularDesignError:
            skipped[count] = sub.L
    return fits, skipped


# ---------------------------------------------------------------------------
# objective evaluation (exact and discretized) and subgradient


def _coeff_blocks(b, data, cfg):
    b = np.asarray(b, dtype=float).ravel()
    dim = (cfg.s + 1) * (data.D + 1)
    if b.size != dim:
        raise DomainError(f"coefficient vector must have length {dim}, got {b.size}")
    return b.reshape(cfg.s + 1, data.D + 1)


def _residual_polys(bmat, data, cfg):
    """Coefficients of t -> B_l - P(X_l, th)' b, ascending powers, (L, s+1)."""
    inv_fact = np.array([1.0 / math.factorial(j) for j in range(cfg.s + 1)])
    c = data.X1 @ bmat.T  # L x (s+1)
    poly = -c * (cfg.h ** np.arange(cfg.s + 1)) * inv_fact
    poly[:, 0] += data.B
    return poly


def _segments(poly_row, lo, hi):
    """Kink locations of one residual polynomial inside (lo, hi)."""
    coeffs_desc = poly_row[::-1]
    top = np.max(np.abs(coeffs_desc))
    if top == 0.0:
        return [lo, hi]
    # drop leading coefficients that are negligible relative to the largest;
    # they cannot move a root into the unit-scale integration window
    nz = np.nonzero(np.abs(coeffs_desc) > 1e-14 * top)[0]
    if nz.size == 0 or coeffs_desc[nz[0] :].size <= 1:
        return [lo, hi]
    roots = np.roots(coeffs_desc[nz[0] :])
    cuts = sorted(
        float(r.real)
        for r in roots
        if abs(r.imag) < 1e-12 and lo < r.real < hi
    )
    return [lo, *cuts, hi]


def aqr_objective(b, alpha, data, cfg):
    """Exact kernel-integrated check objective at coefficient vector b.

    The integration interval is split at the (at most s per auction) points
    where a residual changes sign, and Gauss-Legendre of cfg.quad_order is
    applied per segment, where the integrand is polynomial and the rule is
    exact.  Nonnegative and convex in b.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must be inside (0, 1), got {alpha!r}")
    bmat = _coeff_blocks(b, data, cfg)
    lo, hi = _trunc_range(alpha, cfg.h)
    polys = _residual_polys(bmat, data, cfg)
    rule = gauss_legendre(cfg.quad_order)
    total = 0.0
    for l in range(data.L):
        cuts = _segments(polys[l], lo, hi)
        for seg_lo, seg_hi in zip(cuts[:-1], cuts[1:]):
            t, w = rule.mapped(seg_lo, seg_hi)
            resid = np.polynomial.polynomial.polyval(t, polys[l])
            levels = alpha + cfg.h * t
            if cfg.link_bidders is not None:
                levels = phi(np.clip(levels, 0.0, 1.0), cfg.link_bidders)
            check = resid * (levels - (resid < 0))
            total += float(w @ (check * cfg.kernel(t)))
    return total / data.L


def aqr_subgradient(b, alpha, data, cfg):
    """A subdifferential element of the exact objective at b.

    Equals the gradient wherever no residual vanishes on a set of positive
    measure; kinks contribute nothing to the integral.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must be inside (0, 1), got {alpha!r}")
    bmat = _coeff_blocks(b, data, cfg)
    lo, hi = _trunc_range(alpha, cfg.h)
    polys = _residual_polys(bmat, data, cfg)
    rule = gauss_legendre(cfg.quad_order)
    basis = PolyBasis(cfg.s) if cfg.s >= 1 else None
    grad = np.zeros((cfg.s + 1, data.D + 1))
    for l in range(data.L):
        cuts = _segments(polys[l], lo, hi)
        for seg_lo, seg_hi in zip(cuts[:-1], cuts[1:]):
            t, w = rule.mapped(seg_lo, seg_hi)
            resid = np.polynomial.polynomial.polyval(t, polys[l])
            levels = alpha + cfg.h * t
            if cfg.link_bidders is not None:
                levels = phi(np.clip(levels, 0.0, 1.0), cfg.link_bidders)
            dcheck = (resid < 0) - levels  # d rho / d residual, times -1 below
            wk = w * cfg.kernel(t) * dcheck
            pi_th = basis.pi(cfg.h * t) if basis is not None else np.ones((t.size, 1))
            grad += np.outer(wk @ pi_th, data.X1[l])
    return grad.ravel() / data.L


def aqr_objective_discretized(b, alpha, data, cfg):
    """Objective under the fixed Gauss-Legendre discretization the solver uses.

    This is the finite weighted multi-level check regression whose exact
    minimizer the LP oracle computes.
    """
    bmat = _coeff_blocks(b, data, cfg)
    t, omega, levels, _ = _level_nodes(alpha, cfg)
    inv_fact = np.array([1.0 / math.factorial(j) for j in range(cfg.s + 1)])
    pi_th = (cfg.h * t)[:, None] ** np.arange(cfg.s + 1) * inv_fact
    resid = data.B[:, None] - (data.X1 @ bmat.T) @ pi_th.T
    check = resid * (levels[None, :] - (resid < 0))
    return float((check @ omega).sum()) / data.L


# ---------------------------------------------------------------------------
# quantile-function views


def _check_alpha_hull(fit, alpha):
    grid = fit.alpha_grid
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < grid[0] - 1e-12) or np.any(alpha > grid[-1] + 1e-12):
        raise RangeError(
            f"level {alpha!r} outside fitted grid [{grid[0]}, {grid[-1]}]; "
            "no boundary extrapolation",
            bound="lower" if np.any(alpha < grid[0]) else "upper",
        )
    return np.clip(alpha, grid[0], grid[-1])


def bid_quantile(fit, alpha, x):
    """Monotonized bid quantile at level alpha, linearly interpolated on the grid."""
    alpha = _check_alpha_hull(fit, alpha)
    curve = fit.level_curve(x)
    out = np.interp(alpha, fit.alpha_grid, curve)
    return float(out) if np.ndim(alpha) == 0 else out


def bid_quantile_deriv(fit, j, alpha, x):
    """j-th derivative of the bid quantile in the level argument (j = 1..s)."""
    alpha = _check_alpha_hull(fit, alpha)
    vals = fit.deriv_curve(x, j)
    out = np.interp(alpha, fit.alpha_grid, vals)
    return float(out) if np.ndim(alpha) == 0 else out


def generalized_inverse(grid, curve, t):
    """inf{a in grid hull: curve(a) >= t} on a nondecreasing grid curve."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < curve[0] - 1e-12 * max(1.0, abs(curve[0]))):
        raise RangeError(
            f"target {t!r} below the fitted range [{curve[0]}, {curve[-1]}]", bound="lower"
        )
    if np.any(t_arr > curve[-1] + 1e-12 * max(1.0, abs(curve[-1]))):
        raise RangeError(
            f"target {t!r} above the fitted range [{curve[0]}, {curve[-1]}]", bound="upper"
        )
    t_arr = np.clip(t_arr, curve[0], curve[-1])
    idx = np.searchsorted(curve, t_arr, side="left")
    out = np.empty_like(t_arr)
    at_knot = idx == 0
    out[at_knot] = grid[0]
    inner = ~at_knot
    i = idx[inner]
    denom = curve[i] - curve[i - 1]
    frac = np.where(denom > 0, (t_arr[inner] - curve[i - 1]) / np.where(denom > 0, denom, 1.0), 1.0)
    out[inner] = grid[i - 1] + frac * (grid[i] - grid[i - 1])
    return float(out[0]) if np.ndim(t) == 0 else out


def bid_quantile_inverse(fit, t, x):
    """Generalized inverse of the monotonized bid quantile at price t."""
    return generalized_inverse(fit.alpha_grid, fit.level_curve(x), t)

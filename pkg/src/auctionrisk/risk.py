"""Second-stage estimation of the seller's risk-aversion coefficient.

Each admissible auction contributes the first-order-condition residual

    q(z, theta, psi) = U_theta(w) + U_theta'(r) psi1(psi2(r, x), x) (1 - psi2(r, x))
                       - U_theta(r),

with psi1 the value-quantile derivative and psi2 the value CDF plugged in
from the first stage.  theta_hat minimizes Q_L(theta) = mean of q^2 over a
bounded interval; at the truth with exact plug-ins every residual vanishes.
Inference is by the ordinary nonparametric bootstrap: resample whole
auctions and re-run both stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aqr import fit_aqr, refit_warm
from .data import AuctionDataset
from .errors import ConvergenceError, DataError, DomainError
from .seller import GOLDEN_RATIO, crra, crra_theta_derivs
from .valuation import ValuationModel, ValueModelBase

__all__ = [
    "RiskObjectiveContext",
    "RiskEstimate",
    "BootstrapResult",
    "build_risk_context",
    "q_residual",
    "fit_theta",
    "bootstrap_theta",
]


@dataclass
class RiskObjectiveContext:
    """Admissible records and their first-stage plug-in values.

    Records enter when the outside value is present and positive, the
    reserve is present, and the reserve lies inside the per-record trimmed
    value range (reserves beyond the extreme fitted quantiles are removed,
    with counts reported in ``trim_report``).
    """

    data: AuctionDataset
    models: dict  # bidder count -> value model
    theta_bounds: tuple = (-5.0, 10.0)
    used_idx: np.ndarray = field(default=None, repr=False)
    r: np.ndarray = field(default=None, repr=False)
    w: np.ndarray = field(default=None, repr=False)
    hazard: np.ndarray = field(default=None, repr=False)  # psi1(psi2(r,x),x)(1-psi2(r,x))
    trim_report: dict = field(default_factory=dict)

    @property
    def n_used(self):
        return 0 if self.used_idx is None else int(self.used_idx.size)


def _as_model_map(model):
    if isinstance(model, dict):
        return {int(k): v for k, v in model.items()}
    if isinstance(model, ValueModelBase):
        return {int(model.n_bidders): model}
    raise DomainError("model must be a value model or a dict keyed by bidder count")


def build_risk_context(data, model, theta_bounds=(-5.0, 10.0)):
    """Assemble the stage-two context from a dataset and fitted model(s)."""
    models = _as_model_map(model)
    lo, hi = theta_bounds
    if not lo < hi:
        raise DomainError(f"theta bounds must be an interval, got {theta_bounds!r}")
    n = data.L
    has_w = ~np.isnan(data.W) & (data.W > 0)
    has_r = ~np.isnan(data.R)
    covered = np.isin(data.I, list(models.keys()))
    candidate = has_w & has_r & covered
    alpha_star = np.full(n, np.nan)
    hazard = np.full(n, np.nan)
    for count, m in models.items():
        rows = np.nonzero(candidate & (data.I == count))[0]
        if rows.size == 0:
            continue
        if hasattr(m, "stage_two_inputs"):
            a_s, hz = m.stage_two_inputs(data.R[rows], data.X[rows])
        else:  # analytic models: direct evaluation
            a_s = np.empty(rows.size)
            hz = np.empty(rows.size)
            for k, i in enumerate(rows):
                v_lo, v_hi = m.value_bounds(data.X[i])
                if not v_lo <= data.R[i] <= v_hi:
                    a_s[k] = np.nan
                    hz[k] = np.nan
                    continue
                a = m.value_cdf(data.R[i], data.X[i])
                a_s[k] = a
                hz[k] = m.value_quantile_deriv(1, a, data.X[i]) * (1.0 - a)
        alpha_star[rows] = a_s
        hazard[rows] = hz
    used = candidate & ~np.isnan(hazard)
    trim_report = {
        "n_total": int(n),
        "n_missing_or_nonpositive_w": int(np.sum(~has_w)),
        "n_missing_r": int(np.sum(~has_r)),
        "n_no_stratum_model": int(np.sum(has_w & has_r & ~covered)),
        "n_reserve_trimmed": int(np.sum(candidate & np.isnan(hazard))),
        "n_used": int(np.sum(used)),
    }
    idx = np.nonzero(used)[0]
    return RiskObjectiveContext(
        data=data,
        models=models,
        theta_bounds=(float(lo), float(hi)),
        used_idx=idx,
        r=data.R[idx],
        w=data.W[idx],
        hazard=hazard[idx],
        trim_report=trim_report,
    )


def q_residual(record, theta, model):
    """FOC residual of one auction record at candidate theta."""
    if record.outside_value is None or record.reserve is None:
        raise DataError("record needs both outside value and reserve for the risk stage")
    m = _as_model_map(model)[int(record.n_bidders)]
    x = np.asarray(record.covariates, dtype=float)
    a = m.value_cdf(record.reserve, x)
    hz = m.value_quantile_deriv(1, a, x) * (1.0 - a)
    return float(
        crra(theta, record.outside_value)
        + crra(theta, record.reserve, 1) * hz
        - crra(theta, record.reserve)
    )


def _q_vector(theta, w, r, hazard):
    return crra(theta, w) + r ** (-theta) * hazard - crra(theta, r)


def _objective(theta, w, r, hazard):
    q = _q_vector(theta, w, r, hazard)
    return float(np.mean(q * q))


def _objective_derivs(theta, w, r, hazard):
    """(Q, Q', Q'') of the mean-squared FOC residual in theta."""
    uw, duw, d2uw = crra_theta_derivs(theta, w)
    ur, dur, d2ur = crra_theta_derivs(theta, r)
    logr = np.log(r)
    upr = r ** (-theta)
    q = uw + upr * hazard - ur
    dq = duw - logr * upr * hazard - dur
    d2q = d2uw + logr * logr * upr * hazard - d2ur
    return (
        float(np.mean(q * q)),
        float(2.0 * np.mean(q * dq)),
        float(2.0 * np.mean(dq * dq + q * d2q)),
    )


@dataclass(frozen=True)
class BootstrapResult:
    se: float
    percentile_2_5: float
    percentile_97_5: float
    replicates: np.ndarray
    n_failed: int


@dataclass(frozen=True)
class RiskEstimate:
    theta_hat: float
    objective_at_min: float
    used_records: int
    bandwidth: float | None
    at_bound: bool
    diagnostics: dict = field(compare=False)
    boot: BootstrapResult | None = None


def fit_theta(ctx):
    """Minimize the squared-FOC sample objective over the theta interval.

    Coarse grid scan, golden-section bracketing, then Newton polish using
    the analytic derivatives; a solution pinned at either interval end is
    flagged rather than silently returned.
    """
    if ctx.n_used < 1:
        raise DataError("no admissible records for the risk stage")
    w, r, hz = ctx.w, ctx.r, ctx.hazard
    lo, hi = ctx.theta_bounds
    grid = np.linspace(lo, hi, 151)
    vals = np.array([_objective(t, w, r, hz) for t in grid])
    g = int(np.argmin(vals))
    b_lo = grid[max(g - 1, 0)]
    b_hi = grid[min(g + 1, grid.size - 1)]
    # golden section on [b_lo, b_hi]
    x1 = b_hi - GOLDEN_RATIO * (b_hi - b_lo)
    x2 = b_lo + GOLDEN_RATIO * (b_hi - b_lo)
    f1 = _objective(x1, w, r, hz)
    f2 = _objective(x2, w, r, hz)
    for _ in range(90):
        if b_hi - b_lo < 1e-12:
            break
        if f1 > f2:
            b_lo, x1, f1 = x1, x2, f2
            x2 = b_lo + GOLDEN_RATIO * (b_hi - b_lo)
            f2 = _objective(x2, w, r, hz)
        else:
            b_hi, x2, f2 = x2, x1, f1
            x1 = b_hi - GOLDEN_RATIO * (b_hi - b_lo)
            f1 = _objective(x1, w, r, hz)
    theta = 0.5 * (b_lo + b_hi)
    # Newton polish on the smooth 1-d objective
    for _ in range(8):
        val, grad, hess = _objective_derivs(theta, w, r, hz)
        if hess <= 0 or not np.isfinite(hess):
            break
        step = grad / hess
        cand = theta - step
        if not lo <= cand <= hi:
            break
        theta = cand
        if abs(step) < 1e-14 * max(1.0, abs(theta)):
            break
    at_bound = bool(g == 0 or g == grid.size - 1)
    obj = _objective(theta, w, r, hz)
    q_at = _q_vector(theta, w, r, hz)
    fits = [m.fit for m in ctx.models.values() if hasattr(m, "fit")]
    bandwidth = float(fits[0].config.h) if fits else None
    return RiskEstimate(
        theta_hat=float(theta),
        objective_at_min=obj,
        used_records=ctx.n_used,
        bandwidth=bandwidth,
        at_bound=at_bound,
        diagnostics={"q_residuals": q_at, "trim_report": dict(ctx.trim_report)},
    )


def _refit_models(sub, ctx):
    """Stage-one refits on a resampled dataset, warm-started from the originals."""
    models = {}
    for count, m in ctx.models.items():
        if not hasattr(m, "fit"):
            raise DomainError("bootstrap needs refittable (AQR-backed) value models")
        stratum = sub.I == count
        if not np.any(stratum):
            continue
        sdata = sub.subset(np.nonzero(stratum)[0])
        cfg = m.fit.config
        if sdata.L < (cfg.s + 1) * (sdata.D + 1):
            continue
        models[count] = ValuationModel(refit_warm(sdata, cfg, m.fit), count)
    if not models:
        raise DataError("no stratum could be refit on the bootstrap resample")
    return models


def bootstrap_theta(ctx, n_replicates, seed, point_estimate=None):
    """Ordinary nonparametric bootstrap of theta_hat.

    Resamples whole auctions with replacement and re-runs both stages per
    replicate (the AQR refit warm-starts from the original coefficients).
    Deterministic given the seed: replicate i uses the i-th spawn of the
    master seed sequence, and results aggregate in replicate order.
    """
    if n_replicates < 2:
        raise DomainError(f"need at least 2 bootstrap replicates, got {n_replicates}")
    if point_estimate is None:
        point_estimate = fit_theta(ctx)
    master = np.random.SeedSequence(seed)
    children = master.spawn(n_replicates)
    thetas = []
    n_failed = 0
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.integers(0, ctx.data.L, ctx.data.L)
        try:
            sub = ctx.data.subset(idx)
            models = _refit_models(sub, ctx)
            b_ctx = build_risk_context(sub, models, ctx.theta_bounds)
            thetas.append(fit_theta(b_ctx).theta_hat)
        except (DataError, DomainError, ConvergenceError, np.linalg.LinAlgError):
            n_failed += 1
    if n_failed > 0.2 * n_replicates:
        raise ConvergenceError(
            f"bootstrap failed on {n_failed}/{n_replicates} replicates"
        )
    reps = np.array(thetas)
    boot = BootstrapResult(
        se=float(np.std(reps, ddof=1)),
        percentile_2_5=float(np.percentile(reps, 2.5)),
        percentile_97_5=float(np.percentile(reps, 97.5)),
        replicates=reps,
        n_failed=n_failed,
    )
    return RiskEstimate(
        theta_hat=point_estimate.theta_hat,
        objective_at_min=point_estimate.objective_at_min,
        used_records=point_estimate.used_records,
        bandwidth=point_estimate.bandwidth,
        at_bound=point_estimate.at_bound,
        diagnostics=point_estimate.diagnostics,
        boot=boot,
    )

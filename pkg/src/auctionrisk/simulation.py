"""Data-generating processes, Monte Carlo harness, and model-fit tooling.

The benchmark design: value quantile V(a|X) = g0(a) + g1(a) X1 + g2(a) X2
with g0(a) = -log(1 - (1 - 1/e) a), g1 = 1, g2(a) = 1 - exp(-5a);
covariates independent uniform on [0,1]; three bidders; the seller's outside
value is V(beta|X) with beta uniform on [0.05, 0.5]; the observed reserve is
the exact optimal reserve under the true CRRA coefficient, computed from the
true quantile function by grid search plus golden-section refinement (the
only generation rule under which the first-order condition holds at the
truth).  The winning bid is the second-highest of the bidders' values,
drawn by mapping a uniform through the inverse of the winning-bid rank CDF.

Randomness uses numpy SeedSequence throughout: replicate i of a Monte Carlo
run is seeded by SeedSequence(seed).spawn(i-th child), so any replicate is
reproducible in isolation; within one simulated dataset the draw order is
covariates, winning-bid ranks, outside-value ranks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .aqr import AqrConfig, fit_aqr, rule_of_thumb_bandwidth
from .data import AuctionDataset, AuctionRecord
from .errors import ConvergenceError, DataError, DomainError, SingularDesignError
from .orderstat import phi, phi_inverse
from .risk import bootstrap_theta, build_risk_context, fit_theta
from .seller import UtilitySpec, optimal_reserve_batch
from .valuation import (
    AnalyticValueModel,
    LinearQuantileCurves,
    ValuationModel,
    uniform_value_model,
)

__all__ = [
    "DgpSpec",
    "EstimationConfig",
    "McConfig",
    "McMetrics",
    "McResult",
    "FitReport",
    "CounterfactualReport",
    "paper51_truth",
    "truth_model",
    "simulate_auctions",
    "sample_winning_ranks",
    "fit_value_models",
    "run_monte_carlo",
    "quantile_imse",
    "model_fit_report",
    "counterfactual_reserve_shift",
    "sao_paulo_lookalike",
]

_E_FACTOR = 1.0 - 1.0 / math.e


def paper51_curves():
    """Benchmark coefficient curves with derivatives up to order 3."""

    def g0(a):
        return -np.log(1.0 - _E_FACTOR * np.asarray(a, dtype=float))

    def g0d1(a):
        return _E_FACTOR / (1.0 - _E_FACTOR * np.asarray(a, dtype=float))

    def g0d2(a):
        return _E_FACTOR**2 / (1.0 - _E_FACTOR * np.asarray(a, dtype=float)) ** 2

    def g0d3(a):
        return 2.0 * _E_FACTOR**3 / (1.0 - _E_FACTOR * np.asarray(a, dtype=float)) ** 3

    def const(c):
        return lambda a: c * np.ones_like(np.asarray(a, dtype=float))

    def g2(a):
        return 1.0 - np.exp(-5.0 * np.asarray(a, dtype=float))

    def g2d(k):
        sign = (-1.0) ** (k + 1)
        return lambda a: sign * 5.0**k * np.exp(-5.0 * np.asarray(a, dtype=float))

    return LinearQuantileCurves(
        [
            (g0, g0d1, g0d2, g0d3),
            (const(1.0), const(0.0), const(0.0), const(0.0)),
            (g2, g2d(1), g2d(2), g2d(3)),
        ]
    )


def paper51_truth(n_bidders=3):
    return AnalyticValueModel(paper51_curves(), n_bidders)


@dataclass(frozen=True)
class DgpSpec:
    """One simulated environment: design, size, true risk coefficient, seed."""

    kind: str = "paper51"  # paper51 | uniform | lookalike
    L: int = 1000
    theta0: float = 0.5
    seed: int = 0
    n_bidders: int = 3
    w_rank_range: tuple = (0.05, 0.5)

    def __post_init__(self):
        if self.kind not in ("paper51", "uniform", "lookalike"):
            raise DomainError(f"unknown DGP kind {self.kind!r}")
        if self.L < 1:
            raise DomainError("need at least one auction")
        if self.n_bidders < 2 or int(self.n_bidders) != self.n_bidders:
            raise DomainError("bidder count must be an integer >= 2")


# lookalike scale constants, calibrated once to the foreclosure-auction
# summary statistics (prices in R$100k, size in sqm); synthetic throughout
_LOOKALIKE = {
    "size_log_mean": 4.727,
    "size_log_sd": 0.62,
    "nb_shape": 1.6,
    "nb_mean_excess": 3.875,
    "n_cap": 12,
    "g0_scale": 0.55,
    "g1_base": 0.0105,
    "g1_ramp": 0.0125,
    "theta_true": 1.5,
    "w_rank_range": (0.30, 0.85),
}


def lookalike_curves():
    c = _LOOKALIKE

    def g0(a):
        return c["g0_scale"] * (-np.log(1.0 - _E_FACTOR * np.asarray(a, dtype=float)))

    def g0d1(a):
        return c["g0_scale"] * _E_FACTOR / (1.0 - _E_FACTOR * np.asarray(a, dtype=float))

    def g0d2(a):
        return c["g0_scale"] * _E_FACTOR**2 / (1.0 - _E_FACTOR * np.asarray(a, dtype=float)) ** 2

    def g1(a):
        return c["g1_base"] + c["g1_ramp"] * (1.0 - np.exp(-3.0 * np.asarray(a, dtype=float)))

    def g1d1(a):
        return 3.0 * c["g1_ramp"] * np.exp(-3.0 * np.asarray(a, dtype=float))

    def g1d2(a):
        return -9.0 * c["g1_ramp"] * np.exp(-3.0 * np.asarray(a, dtype=float))

    return LinearQuantileCurves([(g0, g0d1, g0d2), (g1, g1d1, g1d2)])


def truth_model(spec, n_bidders=None):
    """Analytic ground-truth value model for a DGP spec (per bidder count)."""
    count = spec.n_bidders if n_bidders is None else n_bidders
    if spec.kind == "paper51":
        return AnalyticValueModel(paper51_curves(), count)
    if spec.kind == "uniform":
        return uniform_value_model(0.0, 1.0, count)
    return AnalyticValueModel(lookalike_curves(), count)


def sample_winning_ranks(n, n_bidders, rng, method="inverse"):
    """Ranks of the winning bid: the (I-1)-th order statistic of I uniforms.

    "inverse" maps one uniform through the inverse rank CDF; "sort" draws
    the I uniforms and sorts, as a method-independent oracle.
    """
    if method == "inverse":
        return phi_inverse(rng.random(n), n_bidders)
    if method == "sort":
        draws = rng.random((n, n_bidders))
        return np.sort(draws, axis=1)[:, -2]
    raise DomainError(f"unknown sampling method {method!r}")


_DGP_SCREEN_GRID = np.round(np.arange(1, 100) * 0.01, 10)


def simulate_auctions(spec):
    """Draw one dataset from the spec; deterministic given the seed."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    L = spec.L
    if spec.kind == "lookalike":
        return _simulate_lookalike(spec, rng)
    truth = truth_model(spec)
    d_cov = truth.curves.D if spec.kind == "paper51" else 0
    X = rng.random((L, d_cov))
    ranks = sample_winning_ranks(L, spec.n_bidders, rng)
    bids = _curve_values(truth, ranks, X)
    w_lo, w_hi = spec.w_rank_range
    beta = w_lo + (w_hi - w_lo) * rng.random(L)
    w_vals = _curve_values(truth, beta, X)
    _, reserves = optimal_reserve_batch(
        truth, X, w_vals, UtilitySpec(spec.theta0), _DGP_SCREEN_GRID
    )
    records = [
        AuctionRecord(
            winning_bid=float(bids[i]),
            covariates=tuple(X[i]),
            n_bidders=spec.n_bidders,
            reserve=float(reserves[i]),
            outside_value=float(w_vals[i]),
        )
        for i in range(L)
    ]
    return AuctionDataset(records)


def _curve_values(truth, alphas, X):
    """V(alpha_i | X_i) row by row for an analytic truth model."""
    return truth.value_quantile_batch(np.asarray(alphas, dtype=float)[:, None], X)[:, 0]


def _simulate_lookalike(spec, rng):
    c = _LOOKALIKE
    L = spec.L
    size = np.exp(c["size_log_mean"] + c["size_log_sd"] * rng.standard_normal(L))
    size = np.clip(size, 20.0, 900.0)
    shape = c["nb_shape"]
    p = shape / (shape + c["nb_mean_excess"])
    counts = 2 + np.minimum(rng.negative_binomial(shape, p, L), c["n_cap"] - 2)
    X = size[:, None]
    uni = rng.random(L)
    w_lo, w_hi = c["w_rank_range"]
    beta = w_lo + (w_hi - w_lo) * rng.random(L)
    records = []
    for count in np.unique(counts):
        truth = truth_model(spec, n_bidders=int(count))
        rows = np.nonzero(counts == count)[0]
        ranks = phi_inverse(uni[rows], int(count))
        bids = _curve_values(truth, ranks, X[rows])
        w_vals = _curve_values(truth, beta[rows], X[rows])
        _, reserves = optimal_reserve_batch(
            truth, X[rows], w_vals, UtilitySpec(c["theta_true"]), _DGP_SCREEN_GRID
        )
        for k, i in enumerate(rows):
            records.append(
                (
                    i,
                    AuctionRecord(
                        winning_bid=float(bids[k]),
                        covariates=(float(size[i]),),
                        n_bidders=int(count),
                        reserve=float(reserves[k]),
                        outside_value=float(w_vals[k]),
                    ),
                )
            )
    records.sort(key=lambda pair: pair[0])
    return AuctionDataset([r for _, r in records])


@dataclass(frozen=True)
class EstimationConfig:
    """Two-stage estimation settings shared by the harness and the CLI."""

    s: int = 2
    bandwidth: float | None = None
    bandwidth_power: int = 6
    value_grid: np.ndarray = field(
        default_factory=lambda: np.round(np.arange(1, 50) * 0.02, 10)
    )
    quad_order: int = 33
    level_space: str = "value"  # "value": phi-linked fit; "bid": compose with phi
    theta_bounds: tuple = (-5.0, 10.0)
    min_stratum: int | None = None

    def __post_init__(self):
        if self.level_space not in ("value", "bid"):
            raise DomainError(f"level_space must be 'value' or 'bid', got {self.level_space!r}")
        object.__setattr__(self, "value_grid", np.asarray(self.value_grid, dtype=float))

    def aqr_config(self, bids, n_bidders):
        h = self.bandwidth
        if h is None:
            h = rule_of_thumb_bandwidth(bids, self.bandwidth_power)
        if self.level_space == "value":
            return AqrConfig(
                h=h, s=self.s, alpha_grid=self.value_grid, quad_order=self.quad_order,
                link_bidders=int(n_bidders),
            )
        return AqrConfig(
            h=h, s=self.s, alpha_grid=phi(self.value_grid, n_bidders),
            quad_order=self.quad_order,
        )


def fit_value_models(data, est_cfg):
    """Stage one per bidder-count stratum; returns ({count: model}, skipped)."""
    models = {}
    skipped = {}
    floor = est_cfg.min_stratum
    for count in data.bidder_counts():
        sub = data.stratum(count)
        need = (est_cfg.s + 1) * (data.D + 1)
        if sub.L < max(need, floor or 0):
            skipped[count] = sub.L
            continue
        cfg = est_cfg.aqr_config(sub.B, count)
        try:
            models[count] = ValuationModel(fit_aqr(sub, cfg), count)
        except (SingularDesignError, ConvergenceError):
            skipped[count] = sub.L
    if not models:
        raise DataError("no bidder-count stratum was large enough to fit")
    return models, skipped


def quantile_imse(estimated, truth, grid):
    """Trapezoid integral of the squared error over the evaluation grid."""
    estimated = np.asarray(estimated, dtype=float)
    truth = np.asarray(truth, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if estimated.shape != truth.shape or estimated.shape != grid.shape:
        raise DomainError("curve and grid lengths differ")
    return float(np.trapezoid((estimated - truth) ** 2, grid))


@dataclass(frozen=True)
class McMetrics:
    """Replication summary of the risk-coefficient estimator."""

    bias: float
    mbias: float
    std: float
    b_se: float
    mse: float
    iqr: float
    replications: int

    @staticmethod
    def from_replicates(theta_hats, theta0, boot_ses=()):
        th = np.asarray(theta_hats, dtype=float)
        dev = th - theta0
        std = float(np.std(th, ddof=1))
        # scaled interquartile range of replication-studentized estimates;
        # ~1 under normal tails
        iqr = float(
            (np.percentile(th, 75) - np.percentile(th, 25)) / (std * 1.349)
        ) if std > 0 else float("nan")
        boot_ses = np.asarray(list(boot_ses), dtype=float)
        return McMetrics(
            bias=float(np.mean(dev)),
            mbias=float(np.median(dev)),
            std=std,
            b_se=float(np.mean(boot_ses)) if boot_ses.size else float("nan"),
            mse=float(np.mean(dev**2)),
            iqr=iqr,
            replications=int(th.size),
        )


@dataclass(frozen=True)
class McConfig:
    replications: int = 200
    bootstrap_b: int = 0
    bootstrap_on: int = 0  # bootstrap the first this-many replicates
    estimate_theta: bool = True
    track_curves_at: tuple | None = None  # covariate point for IMSE tracking
    n_jobs: int = 1


@dataclass
class McResult:
    metrics: McMetrics | None
    imse_v: float
    imse_v1: float
    rows: list
    n_failed: int


def _replicate_seed(master_seed, index):
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


def run_replicate(spec, est_cfg, mc, index):
    """One Monte Carlo replicate; reproducible from (spec, est_cfg, index)."""
    child = _replicate_seed(spec.seed, index)
    ints = child.generate_state(2)
    rep_spec = replace(spec, seed=int(ints[0]))
    data = simulate_auctions(rep_spec)
    models, _ = fit_value_models(data, est_cfg)
    row = {"replicate": index, "seed": int(ints[0])}
    model = models[spec.n_bidders]
    row["h"] = float(model.fit.config.h)
    if mc.track_curves_at is not None:
        x0 = np.asarray(mc.track_curves_at, dtype=float)
        grid = est_cfg.value_grid
        truth = truth_model(spec)
        v_hat = model.value_quantile(grid, x0)
        v1_hat = model.value_quantile_deriv(1, grid, x0)
        row["imse_v"] = quantile_imse(v_hat, truth.value_quantile(grid, x0), grid)
        row["imse_v1"] = quantile_imse(v1_hat, truth.value_quantile_deriv(1, grid, x0), grid)
    if mc.estimate_theta:
        ctx = build_risk_context(data, models, est_cfg.theta_bounds)
        if index < mc.bootstrap_on and mc.bootstrap_b > 0:
            est = bootstrap_theta(ctx, mc.bootstrap_b, int(ints[1]))
            row["b_se"] = est.boot.se
        else:
            est = fit_theta(ctx)
        row["theta_hat"] = est.theta_hat
        row["n_used"] = est.used_records
        row["at_bound"] = est.at_bound
    return row


def run_monte_carlo(spec, est_cfg, mc):
    """Replicated simulate -> fit -> estimate pipeline with summary metrics."""
    if mc.replications < 2:
        raise DomainError("need at least 2 replications")
    indices = list(range(mc.replications))
    rows = []
    n_failed = 0
    if mc.n_jobs > 1:
        import multiprocessing as mp

        with mp.Pool(mc.n_jobs) as pool:
            results = pool.starmap(
                _replicate_guard, [(spec, est_cfg, mc, i) for i in indices]
            )
        for res in results:
            if res is None:
                n_failed += 1
            else:
                rows.append(res)
    else:
        for i in indices:
            res = _replicate_guard(spec, est_cfg, mc, i)
            if res is None:
                n_failed += 1
            else:
                rows.append(res)
    if not rows:
        raise ConvergenceError("all Monte Carlo replicates failed")
    metrics = None
    if mc.estimate_theta:
        metrics = McMetrics.from_replicates(
            [r["theta_hat"] for r in rows],
            spec.theta0,
            [r["b_se"] for r in rows if "b_se" in r],
        )
    imse_v = float(np.mean([r["imse_v"] for r in rows])) if mc.track_curves_at else float("nan")
    imse_v1 = float(np.mean([r["imse_v1"] for r in rows])) if mc.track_curves_at else float("nan")
    return McResult(metrics=metrics, imse_v=imse_v, imse_v1=imse_v1, rows=rows, n_failed=n_failed)


def _replicate_guard(spec, est_cfg, mc, index):
    try:
        return run_replicate(spec, est_cfg, mc, index)
    except (DataError, DomainError, ConvergenceError, SingularDesignError, np.linalg.LinAlgError):
        return None


# ---------------------------------------------------------------------------
# model fit (section-6-style) and counterfactual


def _ecdf(sorted_vals, x):
    return np.searchsorted(sorted_vals, x, side="right") / sorted_vals.size


def cdf_imse(sample_vals, simulated_vals, n_grid=2001):
    """Trapezoid integral of the squared ECDF difference over pooled support."""
    sample_vals = np.sort(np.asarray(sample_vals, dtype=float))
    simulated_vals = np.sort(np.asarray(simulated_vals, dtype=float))
    lo = min(sample_vals[0], simulated_vals[0])
    hi = max(sample_vals[-1], simulated_vals[-1])
    grid = np.linspace(lo, hi, n_grid)
    diff = _ecdf(sample_vals, grid) - _ecdf(simulated_vals, grid)
    return float(np.trapezoid(diff**2, grid)), grid


@dataclass(frozen=True)
class FitReport:
    target: str
    bias: float
    percentage_bias: float
    imse: float
    n_records: int
    draws: int
    cdf_grid: np.ndarray = field(repr=False)
    cdf_sample: np.ndarray = field(repr=False)
    cdf_simulated: np.ndarray = field(repr=False)


def model_fit_report(data, models, theta_hat, target="winning_bid", draws=1000, seed=0):
    """Compare observed winning-bid or reserve distributions against the model.

    Winning bids: per observed (bidder count, covariates), simulate ranks of
    the second-highest value and map through the fitted quantile (clamped at
    the trimmed grid ends).  Reserves: per record with an outside value,
    solve the reserve under theta_hat.  Pooled simulated draws against the
    observed empirical CDF.
    """
    models = models if isinstance(models, dict) else {models.n_bidders: models}
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if target == "winning_bid":
        observed = []
        sims = []
        for count, model in sorted(models.items()):
            rows = np.nonzero(data.I == count)[0]
            if rows.size == 0:
                continue
            observed.append(data.B[rows])
            ranks = phi_inverse(rng.random((rows.size, draws)), count)
            sims.append(model.value_quantile_batch(ranks, data.X[rows], padded=True).ravel())
        if not observed:
            raise DataError("no records matched a fitted stratum")
        sample_vals = np.concatenate(observed)
        simulated = np.concatenate(sims)
    elif target == "reserve":
        observed = []
        sims = []
        util = UtilitySpec(float(theta_hat))
        for count, model in sorted(models.items()):
            rows = np.nonzero((data.I == count) & ~np.isnan(data.R) & ~np.isnan(data.W) & (data.W > 0))[0]
            if rows.size == 0:
                continue
            observed.append(data.R[rows])
            lo, hi = model.alpha_bounds()
            grid = _DGP_SCREEN_GRID[(_DGP_SCREEN_GRID >= lo) & (_DGP_SCREEN_GRID <= hi)]
            _, reserves = optimal_reserve_batch(model, data.X[rows], data.W[rows], util, grid)
            sims.append(reserves)
        if not observed:
            raise DataError("no records carry both reserve and outside value")
        sample_vals = np.concatenate(observed)
        simulated = np.concatenate(sims)
        draws = 1
    else:
        raise DomainError(f"unknown model-fit target {target!r}")
    bias = float(np.mean(simulated) - np.mean(sample_vals))
    imse, grid = cdf_imse(sample_vals, simulated)
    return FitReport(
        target=target,
        bias=bias,
        percentage_bias=bias / float(np.mean(sample_vals)),
        imse=imse,
        n_records=int(sample_vals.size),
        draws=int(draws),
        cdf_grid=grid,
        cdf_sample=_ecdf(np.sort(sample_vals), grid),
        cdf_simulated=_ecdf(np.sort(simulated), grid),
    )


@dataclass(frozen=True)
class CounterfactualReport:
    """Risk-neutral minus fitted-theta reserves, overall and by size band."""

    delta: np.ndarray
    reserve_fitted: np.ndarray
    reserve_neutral: np.ndarray
    record_idx: np.ndarray
    groups: dict  # name -> {n, mean_increase, pct_increase}


_COUNTERFACTUAL_BANDS = {"small": (20, 30), "medium": (45, 55), "large": (70, 80)}


def counterfactual_reserve_shift(data, models, theta_hat, group_covariate=0):
    """Reserve increase a risk-neutral seller would post, record by record."""
    models = models if isinstance(models, dict) else {models.n_bidders: models}
    util_fit = UtilitySpec(float(theta_hat))
    util_neutral = UtilitySpec(0.0)
    idx_all, r_fit, r_neutral = [], [], []
    for count, model in sorted(models.items()):
        rows = np.nonzero((data.I == count) & ~np.isnan(data.W) & (data.W > 0))[0]
        if rows.size == 0:
            continue
        lo, hi = model.alpha_bounds()
        grid = _DGP_SCREEN_GRID[(_DGP_SCREEN_GRID >= lo) & (_DGP_SCREEN_GRID <= hi)]
        _, ra = optimal_reserve_batch(model, data.X[rows], data.W[rows], util_fit, grid)
        _, rn = optimal_reserve_batch(model, data.X[rows], data.W[rows], util_neutral, grid)
        idx_all.append(rows)
        r_fit.append(ra)
        r_neutral.append(rn)
    if not idx_all:
        raise DataError("no records carry an outside value")
    idx_all = np.concatenate(idx_all)
    order = np.argsort(idx_all)
    idx_all = idx_all[order]
    r_fit = np.concatenate(r_fit)[order]
    r_neutral = np.concatenate(r_neutral)[order]
    delta = r_neutral - r_fit

    sizes = data.X[idx_all, group_covariate] if data.D else np.zeros(idx_all.size)
    groups = {}

    def band_stats(name, mask):
        if not np.any(mask):
            return
        groups[name] = {
            "n": int(np.sum(mask)),
            "mean_increase": float(np.mean(delta[mask])),
            "pct_increase": float(100.0 * np.mean(delta[mask]) / np.mean(r_fit[mask])),
        }

    band_stats("overall", np.ones(idx_all.size, dtype=bool))
    for name, (p_lo, p_hi) in _COUNTERFACTUAL_BANDS.items():
        lo_val, hi_val = np.percentile(sizes, [p_lo, p_hi])
        band_stats(name, (sizes >= lo_val) & (sizes <= hi_val))
    return CounterfactualReport(
        delta=delta,
        reserve_fitted=r_fit,
        reserve_neutral=r_neutral,
        record_idx=idx_all,
        groups=groups,
    )


def sao_paulo_lookalike(L=754, seed=17):
    """Synthetic stand-in for the foreclosure-auction sample (Table-3 scale)."""
    spec = DgpSpec(kind="lookalike", L=L, theta0=_LOOKALIKE["theta_true"], seed=seed)
    return simulate_auctions(spec)

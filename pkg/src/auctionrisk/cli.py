"""Command-line pipeline driver.

Subcommands: simulate, fit-quantiles, fit-theta, bootstrap, monte-carlo,
model-fit, counterfactual.  Runs are configured by an INI file (plain-text
key = value under section headers); every output file starts with a
provenance comment carrying the package version, the seed, and a hash of
the resolved configuration.  Exit codes: 0 ok, 2 config error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .data import format_auction_csv, read_auction_csv
from .errors import (
    AuctionRiskError,
    ConfigError,
    ConvergenceError,
    DataError,
    DomainError,
    RangeError,
    SingularDesignError,
)
from .risk import bootstrap_theta, build_risk_context, fit_theta
from .simulation import (
    DgpSpec,
    EstimationConfig,
    McConfig,
    counterfactual_reserve_shift,
    fit_value_models,
    model_fit_report,
    run_monte_carlo,
    simulate_auctions,
)

__all__ = ["main"]


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_grid(text):
    """start:stop:step grid specification, inclusive of both ends."""
    try:
        start, stop, step = (float(tok) for tok in text.split(":"))
    except ValueError:
        raise ConfigError(f"bad grid spec {text!r}; expected start:stop:step") from None
    if step <= 0 or stop <= start:
        raise ConfigError(f"bad grid spec {text!r}")
    n = int(round((stop - start) / step))
    grid = np.round(start + step * np.arange(n + 1), 12)
    return grid[grid <= stop + 1e-12]


class RunConfig:
    """Validated view over the INI file plus command-line overrides."""

    def __init__(self, path, overrides):
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if path is not None:
            read = parser.read(path)
            if not read:
                raise ConfigError(f"config file {path!r} not found or unreadable")
        self.parser = parser
        self.overrides = overrides
        canonical = io.StringIO()
        parser.write(canonical)
        material = canonical.getvalue() + repr(sorted(overrides.items()))
        self.hash = hashlib.sha256(material.encode()).hexdigest()[:12]

    def get(self, section, key, default=None, cast=str):
        if key in self.overrides and self.overrides[key] is not None:
            raw = self.overrides[key]
        elif self.parser.has_option(section, key):
            raw = self.parser.get(section, key)
        else:
            return default
        try:
            if cast is bool:
                return str(raw).strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from None

    def estimation_config(self):
        bandwidth = self.get("aqr", "bandwidth", None, float)
        power = self.get("aqr", "bandwidth_power", 6, int)
        if bandwidth is not None and bandwidth <= 0:
            raise ConfigError(f"bandwidth must be positive, got {bandwidth}")
        if power not in (5, 6, 7):
            raise ConfigError(f"bandwidth_power must be 5, 6 or 7, got {power}")
        grid_spec = self.get("aqr", "value_grid", "0.01:0.99:0.01")
        grid = _parse_grid(grid_spec)
        if grid[0] <= 0 or grid[-1] >= 1:
            raise ConfigError("value grid must lie strictly inside (0, 1)")
        s = self.get("aqr", "s", 2, int)
        if s < 1:
            raise ConfigError(f"polynomial order must be >= 1, got {s}")
        bounds_txt = self.get("theta", "bounds", "-5,10")
        try:
            lo, hi = (float(tok) for tok in bounds_txt.split(","))
        except ValueError:
            raise ConfigError(f"bad theta bounds {bounds_txt!r}") from None
        if not lo < hi:
            raise ConfigError(f"theta bounds must be an interval, got {bounds_txt!r}")
        level_space = self.get("aqr", "level_space", "value")
        try:
            return EstimationConfig(
                s=s,
                bandwidth=bandwidth,
                bandwidth_power=power,
                value_grid=grid,
                quad_order=self.get("aqr", "quad_order", 33, int),
                level_space=level_space,
                theta_bounds=(lo, hi),
                min_stratum=self.get("aqr", "min_stratum", None, int),
            )
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc

    def dgp_spec(self):
        l_auctions = self.get("simulate", "L", 1000, int)
        n_bidders = self.get("simulate", "n_bidders", 3, int)
        if n_bidders < 2:
            raise ConfigError(f"n_bidders must be >= 2, got {n_bidders}")
        try:
            return DgpSpec(
                kind=self.get("simulate", "dgp", "paper51"),
                L=l_auctions,
                theta0=self.get("simulate", "theta0", 0.5, float),
                seed=self.get("simulate", "seed", 0, int),
                n_bidders=n_bidders,
            )
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc


def _provenance(cfg, command, seed):
    return f"# auctionrisk={__version__} command={command} seed={seed} config_sha256={cfg.hash}"


def _fmt(x, kind="theta"):
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    if kind == "imse":
        return f"{x:.4e}"
    if kind == "int":
        return str(int(x))
    return f"{x:.4f}"


def _print_summary(data):
    header = f"{'variable':>10} {'mean':>10} {'median':>10} {'25-th pct':>10} {'75-th pct':>10} {'std':>10} {'observations':>13}"
    print(header)
    for row in data.summary():
        print(
            f"{row['variable']:>10} {row['mean']:>10.4f} {row['median']:>10.4f} "
            f"{row['pct25']:>10.4f} {row['pct75']:>10.4f} {row['std']:>10.4f} "
            f"{row['observations']:>13d}"
        )


def _load_dataset(cfg, args):
    path = args.input or cfg.get("io", "input")
    if not path:
        raise ConfigError("no input dataset; pass --input or set [io] input")
    data = read_auction_csv(path)
    _print_summary(data)
    return data


def _fit_models(cfg, data):
    est = cfg.estimation_config()
    models, skipped = fit_value_models(data, est)
    if skipped:
        print(f"skipped strata (too small to fit): {skipped}")
    return est, models


def _out_path(args, cfg, default_name):
    out = args.out or cfg.get("io", "output")
    if out is None:
        return default_name
    if os.path.isdir(out):
        return os.path.join(out, default_name)
    return out


def cmd_simulate(cfg, args):
    spec = cfg.dgp_spec()
    data = simulate_auctions(spec)
    _print_summary(data)
    path = _out_path(args, cfg, "auctions.csv")
    text = format_auction_csv(data)
    _atomic_write(path, _provenance(cfg, "simulate", spec.seed) + "\n" + text)
    print(f"wrote {len(data)} auctions to {path}")
    return 0


def cmd_fit_quantiles(cfg, args):
    data = _load_dataset(cfg, args)
    est, models = _fit_models(cfg, data)
    seed = cfg.get("simulate", "seed", 0, int)
    lines = [_provenance(cfg, "fit-quantiles", seed)]
    lines.append("n_bidders,alpha,block,coef_index,value")
    for count, model in sorted(models.items()):
        fit = model.fit
        for g, alpha in enumerate(fit.alpha_grid):
            for j in range(fit.s + 1):
                for k in range(fit.D + 1):
                    lines.append(f"{count},{alpha!r},{j},{k},{fit.coeffs[g, j, k]!r}")
    path = _out_path(args, cfg, "quantile_coefficients.csv")
    _atomic_write(path, "\n".join(lines) + "\n")

    eval_x_txt = cfg.get("aqr", "eval_x", None)
    if eval_x_txt:
        x0 = np.array([float(tok) for tok in eval_x_txt.split(",")])
    else:
        x0 = data.X.mean(axis=0)
    curve_lines = [_provenance(cfg, "fit-quantiles", seed)]
    curve_lines.append("n_bidders,alpha,value_quantile,value_quantile_d1")
    for count, model in sorted(models.items()):
        lo, hi = model.alpha_bounds()
        grid = est.value_grid[(est.value_grid >= lo) & (est.value_grid <= hi)]
        v = model.value_quantile(grid, x0)
        v1 = model.value_quantile_deriv(1, grid, x0)
        for a, vv, dd in zip(grid, v, v1):
            curve_lines.append(f"{count},{a!r},{vv!r},{dd!r}")
    curve_path = _out_path(args, cfg, "quantile_curves.csv")
    if curve_path == path:
        curve_path = path.replace(".csv", "_curves.csv")
    _atomic_write(curve_path, "\n".join(curve_lines) + "\n")
    print(f"wrote coefficient table to {path} and curves to {curve_path}")
    return 0


def _theta_record(cfg, est_result, command, seed):
    rep = est_result.diagnostics.get("trim_report", {})
    lines = [_provenance(cfg, command, seed)]
    lines.append(f"theta_hat = {_fmt(est_result.theta_hat)}")
    lines.append(f"objective_at_min = {est_result.objective_at_min!r}")
    lines.append(f"used_records = {est_result.used_records}")
    if est_result.bandwidth is not None:
        lines.append(f"bandwidth = {est_result.bandwidth!r}")
    lines.append(f"at_bound = {est_result.at_bound}")
    for key, val in rep.items():
        lines.append(f"trim.{key} = {val}")
    if est_result.boot is not None:
        lines.append(f"bootstrap_se = {_fmt(est_result.boot.se)}")
        lines.append(f"pct_2_5 = {_fmt(est_result.boot.percentile_2_5)}")
        lines.append(f"pct_97_5 = {_fmt(est_result.boot.percentile_97_5)}")
        lines.append(f"bootstrap_failures = {est_result.boot.n_failed}")
    return "\n".join(lines) + "\n"


def cmd_fit_theta(cfg, args):
    data = _load_dataset(cfg, args)
    est_cfg, models = _fit_models(cfg, data)
    ctx = build_risk_context(data, models, est_cfg.theta_bounds)
    result = fit_theta(ctx)
    seed = cfg.get("simulate", "seed", 0, int)
    path = _out_path(args, cfg, "theta_estimate.txt")
    _atomic_write(path, _theta_record(cfg, result, "fit-theta", seed))
    print(f"theta_hat = {result.theta_hat:.4f} (used {result.used_records} records)")
    print(f"wrote estimate record to {path}")
    return 0


def cmd_bootstrap(cfg, args):
    data = _load_dataset(cfg, args)
    est_cfg, models = _fit_models(cfg, data)
    ctx = build_risk_context(data, models, est_cfg.theta_bounds)
    n_boot = cfg.get("bootstrap", "b", 99, int)
    if n_boot < 2:
        raise ConfigError(f"bootstrap b must be >= 2, got {n_boot}")
    seed = args.seed if args.seed is not None else cfg.get("bootstrap", "seed", 0, int)
    result = bootstrap_theta(ctx, n_boot, seed)
    path = _out_path(args, cfg, "theta_bootstrap.txt")
    _atomic_write(path, _theta_record(cfg, result, "bootstrap", seed))
    rep_lines = [_provenance(cfg, "bootstrap", seed), "replicate,theta_hat"]
    for i, th in enumerate(result.boot.replicates):
        rep_lines.append(f"{i},{th!r}")
    rep_path = path.replace(".txt", "_replicates.csv")
    _atomic_write(rep_path, "\n".join(rep_lines) + "\n")
    print(
        f"theta_hat = {result.theta_hat:.4f}, bootstrap se = {result.boot.se:.4f}, "
        f"95% interval [{result.boot.percentile_2_5:.4f}, {result.boot.percentile_97_5:.4f}]"
    )
    print(f"wrote {path} and {rep_path}")
    return 0


def cmd_monte_carlo(cfg, args):
    spec = cfg.dgp_spec()
    est_cfg = cfg.estimation_config()
    reps = cfg.get("montecarlo", "replications", 200, int)
    if reps < 2:
        raise ConfigError(f"replications must be >= 2, got {reps}")
    boot_b = cfg.get("montecarlo", "bootstrap_b", 0, int)
    if boot_b < 0:
        raise ConfigError("bootstrap_b must be >= 0")
    track = cfg.get("montecarlo", "track_x", None)
    mc = McConfig(
        replications=reps,
        bootstrap_b=boot_b,
        bootstrap_on=cfg.get("montecarlo", "bootstrap_on", 0, int),
        estimate_theta=cfg.get("montecarlo", "estimate_theta", True, bool),
        track_curves_at=tuple(float(t) for t in track.split(",")) if track else None,
        n_jobs=cfg.get("montecarlo", "n_jobs", 1, int),
    )
    result = run_monte_carlo(spec, est_cfg, mc)
    lines = [_provenance(cfg, "monte-carlo", spec.seed)]
    lines.append("theta0,L,h_rule,replications,failures,bias,mbias,std,b_se,mse,iqr,imse_v,imse_v1")
    m = result.metrics
    h_rule = (
        f"{est_cfg.bandwidth!r}" if est_cfg.bandwidth is not None else f"sd*L^(-1/{est_cfg.bandwidth_power})"
    )
    row = [
        _fmt(spec.theta0), str(spec.L), h_rule, str(mc.replications), str(result.n_failed),
        _fmt(m.bias if m else None), _fmt(m.mbias if m else None), _fmt(m.std if m else None),
        _fmt(m.b_se if m else None), _fmt(m.mse if m else None), _fmt(m.iqr if m else None),
        _fmt(result.imse_v, "imse"), _fmt(result.imse_v1, "imse"),
    ]
    lines.append(",".join(row))
    path = _out_path(args, cfg, "mc_metrics.csv")
    _atomic_write(path, "\n".join(lines) + "\n")

    log_lines = [_provenance(cfg, "monte-carlo", spec.seed)]
    cols = ["replicate", "seed", "h", "theta_hat", "b_se", "n_used", "at_bound", "imse_v", "imse_v1"]
    log_lines.append(",".join(cols))
    for r in result.rows:
        log_lines.append(",".join("" if r.get(c) is None else repr(r.get(c)) for c in cols))
    log_path = path.replace(".csv", "_replicates.csv")
    _atomic_write(log_path, "\n".join(log_lines) + "\n")
    if m:
        print(
            f"bias={m.bias:.4f} mbias={m.mbias:.4f} std={m.std:.4f} "
            f"b-se={_fmt(m.b_se) or 'n/a'} mse={m.mse:.4f} iqr={m.iqr:.4f}"
        )
    if mc.track_curves_at:
        print(f"IMSE(V)={result.imse_v:.4e} IMSE(V')={result.imse_v1:.4e}")
    print(f"wrote {path} and {log_path}")
    return 0


def _resolve_theta(cfg, data, est_cfg, models):
    theta = cfg.get("modelfit", "theta", None, float)
    if theta is None:
        ctx = build_risk_context(data, models, est_cfg.theta_bounds)
        theta = fit_theta(ctx).theta_hat
        print(f"estimated theta_hat = {theta:.4f}")
    return theta


def cmd_model_fit(cfg, args):
    data = _load_dataset(cfg, args)
    est_cfg, models = _fit_models(cfg, data)
    theta = _resolve_theta(cfg, data, est_cfg, models)
    draws = cfg.get("modelfit", "draws", 1000, int)
    seed = args.seed if args.seed is not None else cfg.get("modelfit", "seed", 0, int)
    target = cfg.get("modelfit", "target", "winning_bid")
    report = model_fit_report(data, models, theta, target=target, draws=draws, seed=seed)
    lines = [_provenance(cfg, "model-fit", seed)]
    lines.append("target,theta,bias,percentage_bias,imse,n_records,draws")
    lines.append(
        f"{report.target},{_fmt(theta)},{_fmt(report.bias)},"
        f"{report.percentage_bias * 100:.2f}%,{_fmt(report.imse, 'imse')},"
        f"{report.n_records},{report.draws}"
    )
    path = _out_path(args, cfg, f"model_fit_{target}.csv")
    _atomic_write(path, "\n".join(lines) + "\n")
    cdf_lines = [_provenance(cfg, "model-fit", seed), "x,cdf_sample,cdf_simulated"]
    for x, f_s, f_m in zip(report.cdf_grid, report.cdf_sample, report.cdf_simulated):
        cdf_lines.append(f"{x!r},{f_s!r},{f_m!r}")
    cdf_path = path.replace(".csv", "_cdf.csv")
    _atomic_write(cdf_path, "\n".join(cdf_lines) + "\n")
    print(
        f"{report.target}: bias={report.bias:.4f} ({report.percentage_bias * 100:.2f}%), "
        f"IMSE={report.imse:.4e}"
    )
    print(f"wrote {path} and {cdf_path}")
    return 0


def cmd_counterfactual(cfg, args):
    data = _load_dataset(cfg, args)
    est_cfg, models = _fit_models(cfg, data)
    theta = _resolve_theta(cfg, data, est_cfg, models)
    seed = cfg.get("modelfit", "seed", 0, int)
    report = counterfactual_reserve_shift(data, models, theta)
    lines = [_provenance(cfg, "counterfactual", seed)]
    lines.append("record,reserve_fitted,reserve_neutral,delta")
    for i, idx in enumerate(report.record_idx):
        lines.append(
            f"{idx},{report.reserve_fitted[i]!r},{report.reserve_neutral[i]!r},{report.delta[i]!r}"
        )
    path = _out_path(args, cfg, "counterfactual_reserves.csv")
    _atomic_write(path, "\n".join(lines) + "\n")
    group_lines = [_provenance(cfg, "counterfactual", seed)]
    group_lines.append("sample,n,increase_in_R,percentage_increase")
    for name, stats in report.groups.items():
        group_lines.append(
            f"{name},{stats['n']},{_fmt(stats['mean_increase'])},{stats['pct_increase']:.2f}%"
        )
    group_path = path.replace(".csv", "_groups.csv")
    _atomic_write(group_path, "\n".join(group_lines) + "\n")
    for name, stats in report.groups.items():
        print(f"{name}: mean increase {stats['mean_increase']:.4f} ({stats['pct_increase']:.2f}%)")
    print(f"wrote {path} and {group_path}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit-quantiles": cmd_fit_quantiles,
    "fit-theta": cmd_fit_theta,
    "bootstrap": cmd_bootstrap,
    "monte-carlo": cmd_monte_carlo,
    "model-fit": cmd_model_fit,
    "counterfactual": cmd_counterfactual,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="auctionrisk",
        description="Ascending-auction value-quantile and seller risk-aversion estimation",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--input", help="input dataset CSV (overrides [io] input)")
    parser.add_argument("--out", help="output path or directory (overrides [io] output)")
    parser.add_argument("--seed", type=int, help="seed override where applicable")
    args = parser.parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    try:
        cfg = RunConfig(args.config, overrides)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"auctionrisk-error: category=config detail={exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"auctionrisk-error: category=data detail={exc}", file=sys.stderr)
        return 3
    except (ConvergenceError, SingularDesignError, RangeError, DomainError, AuctionRiskError) as exc:
        print(f"auctionrisk-error: category=numerical detail={exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

# ccr/cli.py
"""
Batch front end.

    ccr fit      --config run.toml --policies policies.csv --claims claims.csv --out results/
    ccr simulate --config run.toml [--policies ... --claims ... [--fit fit.json]]
    ccr diagnose --config run.toml --policies ... --claims ... [--fit fit.json]
    ccr score    --config run.toml --policies ... --claims ...
    ccr riskrank --config run.toml --policies ... --claims ... [--fit fit.json]
    ccr recover  --config run.toml --threads 8

Exit status: 0 on success, 1 for input or configuration errors, 2 when a fit
does not converge, 3 for numeric failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from ccr import reporter
from ccr.compound import Dataset
from ccr.config import RunConfig, Settings
from ccr.diagnostics import (
    MIN_RESIDUALS,
    aggregate_fit_curves,
    cox_snell_residuals,
    pearson_chisq_counts,
    qq_normal_scores,
    uniformity_tests,
)
from ccr.errors import CCRError, ConfigError, ConvergenceError
from ccr.estimation import FitResult, fit_copula_variants, fit_full, fit_independence, fit_two_stage, \
    model_selection, starting_values
from ccr.log_manager import LogManager
from ccr.recovery import RECOVERY_METHODS, run_recovery_study
from ccr.riskmetrics import (
    DEFAULT_ALPHAS,
    crps_comparison,
    gini_correlation,
    lorenz_gini,
    portfolio_var_table,
    rank_agreement,
    realized_losses,
    risk_scores,
    scores_frame,
)
from ccr.simulation import (
    conditional_density_curves,
    dependence_experiment,
    ecdf_grid,
    property_fund_design,
    regression_design,
    simulate_portfolio,
)
from ccr.utils import read_table, write_csv, write_json

logger = logging.getLogger(__name__)

COMMANDS = ("fit", "simulate", "diagnose", "score", "riskrank", "recover")
NEEDS_DATA = ("fit", "diagnose", "score", "riskrank")


def load_dataset(policies_path, claims_path, scheme: str = "complete", deductible: float = 0.0,
                 limit: float = math.inf) -> Dataset:
    """Read, join and validate the policy and claims tables; `deductible`/`limit` cover missing columns."""
    if not policies_path or not claims_path:
        raise ConfigError("both --policies and --claims are required")
    policies = read_table(policies_path)
    claims = read_table(claims_path)
    data = Dataset.from_frames(policies, claims, scheme, deductible, limit)
    logger.info(f"📋 {len(data)} policies, {data.n_claims} claims ({scheme})")
    return data


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _initial(config: RunConfig, data: Dataset):
    spec = config.spec
    if config.model.df is None or spec.copula != "t":
        return None
    return starting_values(spec, data).replace({"copula.df": config.model.df})


def _fit_dependent(config: RunConfig, data: Dataset, fit: FitResult | None) -> FitResult:
    if fit is not None:
        if fit.fingerprint and fit.fingerprint != data.fingerprint():
            logger.info("reusing a fit estimated on another dataset")
        return fit
    spec = config.spec
    spec.check_columns(data.policy_columns, data.claim_columns)
    return fit_full(spec, data, init=_initial(config, data), seed=config.seed)


def _typical_covariates(data: Dataset) -> dict[str, float]:
    """Policy covariates of the first record; claim-level covariates at their mean."""
    x = {c: float(data.policy_frame[c].iloc[0]) for c in data.policy_columns}
    for c in data.claim_columns:
        x.setdefault(c, float(data.claim_frame[c].mean()))
    return x


def _require_converged(fit: FitResult) -> None:
    if not fit.converged:
        raise ConvergenceError(f"{fit.method} {fit.label} did not converge",
                               convergence=fit.convergence.to_dict())


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _cmd_fit(config: RunConfig, data: Dataset, out: Path, fit: FitResult | None) -> None:
    spec = config.spec
    spec.check_columns(data.policy_columns, data.claim_columns)
    init = _initial(config, data)

    independence = fit_independence(spec, data)
    write_json(independence.to_dict(), out / "fit_independence.json")
    fits = [independence]
    two_stage = None
    if config.scheme != "truncated" and spec.copula != "independence":
        two_stage = fit_two_stage(spec, data, init=init)
        write_json(two_stage.to_dict(), out / "fit_two_stage.json")
        fits.append(two_stage)
    if spec.copula == "independence":
        full = independence
    else:
        start = two_stage.params if two_stage is not None and two_stage.converged else init
        full = fit_full(spec, data, init=start, seed=config.seed)
        if two_stage is not None and full.loglik < two_stage.loglik - 1e-6:
            logger.warning("⚠️ joint fit ended below the two-stage log-likelihood")
        fits.append(full)
    write_json(full.to_dict(), out / "fit.json")
    write_csv(full.summary(), out / "parameters.csv")

    nested = (0, len(fits) - 1) if full is not independence else None
    comparison = model_selection(fits, nested=nested)
    write_json(comparison.to_dict(), out / "comparison.json")
    write_csv(comparison.table, out / "comparison.csv")
    if comparison.lrt:
        lrt = comparison.lrt
        logger.info(f"📊 LRT {lrt['restricted']} vs {lrt['full']}: {lrt['statistic']:.3f} "
                    f"on {lrt['df']} df (p = {lrt['p_value']:.4g})")

    if config.model.compare_variants:
        variants = fit_copula_variants(spec, data)
        write_csv(variants.table, out / "copula_variants.csv")
        reporter.save_model_selection_report(variants, [], out / "copula_variants.xlsx")
    reporter.save_model_selection_report(comparison, fits, out / "model_selection.xlsx")
    _require_converged(full)


def _cmd_simulate(config: RunConfig, data: Dataset | None, out: Path, fit: FitResult | None) -> None:
    options = config.simulate
    did_something = False
    if "taus" in options:
        experiment = dependence_experiment(
            taus=[float(t) for t in options["taus"]],
            families=options.get("families", ["gaussian"]),
            n_sims=int(options.get("experiment_sims", 100_000)),
            seed=config.seed,
        )
        write_csv(experiment.summary, out / "dependence_summary.csv")
        for key, frame in experiment.curves.items():
            write_csv(frame, out / f"ecdf_{key}.csv")
        if config.plots:
            reporter.plot_ecdf_overlay(experiment.curves, out / "ecdf_overlay.html")
        did_something = True

    if data is not None:
        model = _fit_dependent(config, data, fit).model
        sample = simulate_portfolio(model, data, int(options.get("n_sims", 1000)), config.seed,
                                    modified=data.scheme != "complete")
        write_csv(sample.to_frame(), out / "aggregates.csv")
        write_csv(ecdf_grid(sample.totals()), out / "portfolio_ecdf.csv")

        paid = data.claim_amount > 0
        ground_up = data.claim_amount[paid] + data.deductible[data.claim_policy[paid]]
        if ground_up.size:
            lo, hi = np.quantile(ground_up, [0.01, 0.99])
            grid = np.linspace(lo, hi, int(options.get("grid_points", 200)))
            curves = conditional_density_curves(model, _typical_covariates(data),
                                                [int(n) for n in options.get("ns", [1, 2, 3])], grid)
            write_csv(curves, out / "conditional_density.csv")
            if config.plots:
                reporter.plot_density_curves(curves, out / "conditional_density.html")
        did_something = True

    if not did_something:
        raise ConfigError("simulate needs [simulate] taus or a dataset")


def _cmd_diagnose(config: RunConfig, data: Dataset, out: Path, fit: FitResult | None) -> None:
    fitted = _fit_dependent(config, data, fit)
    residuals = cox_snell_residuals(fitted, data)
    write_csv(residuals.to_frame(), out / "residuals.csv")
    qq = qq_normal_scores(residuals)
    write_csv(qq, out / "qq.csv")

    chisq = pearson_chisq_counts(fitted, data, int(config.option("simulate", "count_bins", 5)))
    write_csv(chisq.table, out / "count_chisq.csv")
    tests = {
        "model": fitted.label,
        "pearson_counts": {"statistic": chisq.statistic, "df": chisq.df, "p_value": chisq.p_value},
    }
    if len(residuals) >= MIN_RESIDUALS:
        tests["uniformity"] = uniformity_tests(residuals)
    else:
        logger.warning(f"⚠️ only {len(residuals)} residuals; uniformity tests skipped")
        tests["uniformity"] = None
    write_json(tests, out / "tests.json")

    curves = aggregate_fit_curves(fitted, data, int(config.option("simulate", "n_sims", 200)), config.seed)
    write_csv(curves, out / "aggregate_fit.csv")
    if config.plots:
        reporter.plot_qq(qq, out / "qq.html")
        reporter.plot_aggregate_fit(curves, out / "aggregate_fit.html")


def _cmd_score(config: RunConfig, data: Dataset, out: Path, fit: FitResult | None) -> None:
    if config.holdout_year is None:
        raise ConfigError("score needs [data] holdout_year")
    train, holdout = data.split_by_year(int(config.holdout_year))
    options = config.score
    n_sims = int(options.get("n_sims", 10_000))

    dependent = _fit_dependent(config, train, fit)
    independence = fit_independence(config.spec, train, compute_se=False)
    comparison = crps_comparison(dependent.model, independence.model, holdout, n_sims, config.seed)
    write_csv(comparison.per_policy, out / "crps.csv")

    scores = risk_scores(dependent.model, holdout, n_sims, config.seed)
    means = np.array([s.mean for s in scores])
    losses = realized_losses(holdout)
    column = options.get("premium_column")
    if column and column in holdout.policy_columns:
        contract = holdout.policy_frame[column].to_numpy(dtype=float)
    else:
        contract = np.array([s.mean for s in risk_scores(independence.model, holdout, analytic=True)])
    rows = []
    for base, premium in (("constant", np.ones(len(holdout))), ("contract", contract)):
        result = gini_correlation(means, premium, losses, int(options.get("n_boot", 500)), config.seed,
                                  policy_ids=holdout.policy_ids)
        rows.append({"premium_base": base, **result})
        logger.info(f"📊 Gini ({base} premium): {result['gini']:.4f} (se {result['std_error']:.4f})")
    write_csv(pd.DataFrame(rows), out / "gini.csv")
    write_json({
        "dependent": dependent.label,
        "baseline": independence.label,
        "holdout_year": config.holdout_year,
        "crps": comparison.summary(),
        "gini": rows,
    }, out / "score.json")


def _cv_scores(scores) -> np.ndarray:
    return scores_frame(scores)["cv"].fillna(0.0).to_numpy()


def _cmd_riskrank(config: RunConfig, data: Dataset, out: Path, fit: FitResult | None) -> None:
    options = config.riskrank
    n_sims = int(options.get("n_sims", 10_000))
    dependent = _fit_dependent(config, data, fit)
    independence = fit_independence(config.spec, data, compute_se=False)

    dep_scores = risk_scores(dependent.model, data, n_sims, config.seed)
    ind_scores = risk_scores(independence.model, data, analytic=True)
    frames = [scores_frame(dep_scores).assign(model=dependent.label),
              scores_frame(ind_scores).assign(model="independence")]
    write_csv(pd.concat(frames, ignore_index=True), out / "risk_scores.csv")

    losses = realized_losses(data)
    premiums = np.array([s.mean for s in ind_scores])
    curves = {
        dependent.label: lorenz_gini(_cv_scores(dep_scores), premiums, losses, data.policy_ids),
        "independence": lorenz_gini(_cv_scores(ind_scores), premiums, losses, data.policy_ids),
    }
    write_csv(pd.concat([c.to_frame().assign(model=k) for k, c in curves.items()], ignore_index=True),
              out / "lorenz.csv")
    if config.plots:
        reporter.plot_lorenz(curves, out / "lorenz.html")

    alphas = [float(a) for a in options.get("alphas", DEFAULT_ALPHAS)]
    var_sims = int(options.get("var_sims", 2_000))
    replicates = int(options.get("replicates", 20))
    var = pd.concat([
        portfolio_var_table(dependent.model, data, alphas, var_sims, replicates, config.seed).assign(
            model=dependent.label),
        portfolio_var_table(independence.model, data, alphas, var_sims, replicates, config.seed).assign(
            model="independence"),
    ], ignore_index=True)
    write_csv(var, out / "var.csv")

    agreement = rank_agreement(_cv_scores(dep_scores), _cv_scores(ind_scores))
    write_json({
        "gini": {k: c.gini for k, c in curves.items()},
        "rank_agreement": agreement,
    }, out / "riskrank.json")


def _cmd_recover(config: RunConfig, data: Dataset | None, out: Path, fit: FitResult | None) -> None:
    options = config.recover
    name = options.get("design", "regression")
    rhos = options.get("rho", [0.2, 0.5, 0.9])
    rhos = rhos if isinstance(rhos, list) else [rhos]
    methods = options.get("methods", list(RECOVERY_METHODS))
    size = int(options.get("size", 500))
    if name == "regression":
        designs = [regression_design(float(r), config.scheme, size, float(options.get("deductible", 50.0)),
                                     float(options.get("limit", 10_000.0))) for r in rhos]
    elif name == "property_fund":
        designs = [property_fund_design(size, float(r)).with_scheme(config.scheme) for r in rhos]
    else:
        raise ConfigError(f"unknown recovery design '{name}'")

    for design in designs:
        report = run_recovery_study(design, int(options.get("replications", 250)), config.seed,
                                    methods, config.threads)
        stem = f"recovery_{design.name}_{design.scheme}"
        write_csv(report.table, out / f"{stem}.csv")
        write_csv(reporter.flatten_columns(report.wide()).reset_index(), out / f"{stem}_wide.csv")
        write_csv(report.estimates, out / f"{stem}_estimates.csv")
        reporter.save_recovery_report(report, out / f"{stem}.xlsx")


_HANDLERS = {
    "fit": _cmd_fit,
    "simulate": _cmd_simulate,
    "diagnose": _cmd_diagnose,
    "score": _cmd_score,
    "riskrank": _cmd_riskrank,
    "recover": _cmd_recover,
}


def run_command(config: RunConfig, dataset: Dataset | None = None, fit: FitResult | None = None) -> int:
    """Run `config.command` and write its artifacts under `config.output_dir`; raises CCRError on failure."""
    if config.command not in _HANDLERS:
        raise ConfigError(f"unknown command '{config.command}'; expected one of {COMMANDS}")
    if config.command in NEEDS_DATA and dataset is None:
        raise ConfigError(f"{config.command} needs --policies and --claims")
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    logger.info(f"🚀 ccr {config.command}: seed {config.seed}, {config.threads} worker(s), output {out}")
    _HANDLERS[config.command](config, dataset, out, fit)
    logger.info(f"✅ ccr {config.command} finished")
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--policies", help="Policy table (CSV or xlsx)")
    common.add_argument("--claims", help="Claims table (CSV or xlsx)")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--threads", type=int, help="Worker threads for recovery studies")
    common.add_argument("--fit", help="Saved fit JSON to reuse instead of refitting")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = _Parser(prog="ccr", description="Copula-linked frequency-severity regression")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _report_error(error: CCRError, out_dir) -> None:
    payload = error.to_dict()
    try:
        write_json(payload, Path(out_dir) / "error.json")
    except OSError as e:
        logger.error(f"❌ could not write error.json: {e}")
    print(json.dumps(payload, default=str), file=sys.stderr)


def main(argv=None) -> int:
    settings = Settings()
    out_dir = settings.OUTPUT_DIR or "output"
    log_manager = None
    try:
        args = build_parser().parse_args(argv)
        out_dir = args.out or out_dir
        log_manager = LogManager(settings.LOG_DIR, getattr(logging, args.log_level), command=args.command)
        config = RunConfig.load(args.config) if args.config else RunConfig()
        config.command = args.command
        config.resolve(settings, seed=args.seed, threads=args.threads, output_dir=args.out)
        out_dir = config.output_dir
        dataset = None
        if args.policies or args.claims:
            dataset = load_dataset(args.policies, args.claims, config.scheme, config.deductible, config.limit)
        fit = None
        if args.fit:
            with open(args.fit, encoding="utf-8") as f:
                fit = FitResult.from_dict(json.load(f))
        return run_command(config, dataset, fit)
    except CCRError as e:
        logger.error(f"❌ {e.code}: {e.message}")
        _report_error(e, out_dir)
        return e.exit_status
    except (OSError, KeyError, json.JSONDecodeError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        _report_error(ConfigError(str(e)), out_dir)
        return 1
    finally:
        if log_manager is not None:
            log_manager.close()


if __name__ == "__main__":
    sys.exit(main())

# ccr/diagnostics.py
"""Goodness of fit: Pearson chi-square for counts, Cox-Snell residuals of the conditional severity law."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import special, stats

from ccr.compound import SERIES_CAP, CompoundModel, Dataset, count_designs, log_cond_cdf_terms
from ccr.copulas import EPS
from ccr.errors import DomainError
from ccr.estimation import FitResult
from ccr.marginals import count_cdf, count_logpmf, count_upper_bound, severity_cdf
from ccr.riskmetrics import realized_losses
from ccr.simulation import ecdf_grid, simulate_portfolio

logger = logging.getLogger(__name__)

MIN_RESIDUALS = 8
MIN_EXPECTED = 5.0


@dataclass
class ChiSquareResult:
    statistic: float
    df: int
    table: pd.DataFrame
    p_value: float = math.nan


@dataclass
class ResidualSet:
    """Cox-Snell residuals u = F_{Y|N}(y | n), one per fully observed claim."""

    values: np.ndarray
    policy_ids: np.ndarray
    claim_index: np.ndarray

    def __post_init__(self):
        self.values = np.clip(np.asarray(self.values, dtype=float), EPS, 1.0 - EPS)

    def __len__(self) -> int:
        return self.values.size

    @property
    def normal_scores(self) -> np.ndarray:
        return special.ndtri(self.values)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "policy_id": self.policy_ids,
            "claim": self.claim_index,
            "residual": self.values,
            "normal_score": self.normal_scores,
        })


def _model_of(fit) -> CompoundModel:
    return fit.model if isinstance(fit, FitResult) else fit


def pearson_chisq_counts(fit, data: Dataset, bins: int = 5) -> ChiSquareResult:
    """
    Pearson statistic over count cells 0..K and >= K+1, expected counts summed
    over policies from the fitted count model.
    """
    if bins < 1:
        raise DomainError("need at least one count cell below the tail cell")
    model = _model_of(fit)
    family, mp = model.count_law(*count_designs(model, data))
    cells = np.arange(bins + 1)
    probs = np.exp(count_logpmf(family, mp, cells[:, None]))
    tail = 1.0 - count_cdf(family, mp, bins)
    expected = np.append(probs.sum(axis=1), np.clip(tail, 0.0, None).sum())
    observed = np.append([(data.n == k).sum() for k in cells], (data.n > bins).sum()).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(expected > 0, (observed - expected) ** 2 / expected,
                           np.where(observed > 0, np.inf, 0.0))
    small = expected < MIN_EXPECTED
    if small.any():
        logger.warning(f"⚠️ {int(small.sum())} count cells expect fewer than {MIN_EXPECTED:g} policies; "
                       f"consider merging cells")
    labels = [str(k) for k in cells] + [f">={bins + 1}"]
    table = pd.DataFrame({"count": labels, "observed": observed, "expected": expected, "contribution": contrib})
    statistic = float(contrib.sum())
    n_free = int(fit.params.mask(["frequency"]).sum()) if isinstance(fit, FitResult) else 0
    df = max(len(labels) - 1 - n_free, 1)
    return ChiSquareResult(statistic, df, table, float(stats.chi2.sf(statistic, df)))


def cox_snell_residuals(fit, data: Dataset) -> ResidualSet:
    """
    F_{Y|N}(y_ij | n_i) at every claim observed below the limit, on the ground-up scale.

    Censored data condition each residual on the loss exceeding the deductible.
    Per-payment data only show the payment count k, so there the residual is
    the same exceedance law mixed over the unobserved count m >= k with weights
    P(m | k payments).
    """
    model = _model_of(fit)
    rows = np.flatnonzero(~data.claim_below & ~data.claim_at_limit)
    if rows.size == 0:
        return ResidualSet(np.empty(0), np.empty(0, dtype=object), np.empty(0, dtype=np.int64))
    cp = data.claim_policy[rows]
    claim_index = rows - np.searchsorted(data.claim_policy, cp)
    sev, smp = model.severity_law(data.design(model.spec.severity_covariates, "claim")[rows])
    y = data.claim_amount[rows] + data.deductible[cp]
    if data.scheme == "truncated":
        values = _payment_residuals(model, data, cp, severity_cdf(sev, smp, y))
        return ResidualSet(values, data.policy_ids[cp], claim_index)

    family, mp = model.count_law(*count_designs(model, data))
    log_fn = count_logpmf(family, mp, data.n)[cp]
    f_hi = count_cdf(family, mp, data.n)[cp]
    f_lo = count_cdf(family, mp, data.n - 1)[cp]
    values = np.exp(log_cond_cdf_terms(model.copula(), f_hi, f_lo, log_fn, severity_cdf(sev, smp, y)))
    if data.scheme == "censored":
        d = data.deductible[cp]
        f_d = np.exp(log_cond_cdf_terms(model.copula(), f_hi, f_lo, log_fn, severity_cdf(sev, smp, d)))
        with np.errstate(divide="ignore", invalid="ignore"):
            values = np.where(f_d < 1.0, (values - f_d) / (1.0 - f_d), values)
    return ResidualSet(values, data.policy_ids[cp], claim_index)


def _payment_residuals(model: CompoundModel, data: Dataset, cp: np.ndarray, fy: np.ndarray) -> np.ndarray:
    k = data.n
    x_freq, x_zero, x_one = count_designs(model, data)
    upper = count_upper_bound(*model.count_law(x_freq, x_zero, x_one), tail=1e-14)
    span = int(np.clip(np.max(upper - k), 1, SERIES_CAP))
    m = k[:, None] + np.arange(span + 1)[None, :]

    expand = (lambda x: None if x is None else x[:, None, :])
    family, mp = model.count_law(expand(x_freq), expand(x_zero), expand(x_one))
    log_fm = count_logpmf(family, mp, m)
    f_hi = count_cdf(family, mp, m)
    f_lo = count_cdf(family, mp, m - 1)
    cop = model.copula()
    sev_pol, smp_pol = model.severity_law(data.design(model.spec.severity_covariates, "policy"))
    fd_pol = severity_cdf(sev_pol, smp_pol, data.deductible)[:, None]
    below = np.clip(np.exp(log_cond_cdf_terms(cop, f_hi, f_lo, log_fm, fd_pol)), 0.0, 1.0)

    # P(m | k payments) over the series
    with np.errstate(divide="ignore", invalid="ignore"):
        log_w = (log_fm + special.gammaln(m + 1) - special.gammaln(k + 1)[:, None]
                 - special.gammaln(m - k[:, None] + 1)
                 + np.where(k[:, None] == 0, 0.0, k[:, None] * np.log1p(-below))
                 + np.where(m == k[:, None], 0.0, (m - k[:, None]) * np.log(below)))
        log_w = np.where(np.isnan(log_w), -np.inf, log_w)
        log_w = log_w - special.logsumexp(log_w, axis=1, keepdims=True)
        weights = np.nan_to_num(np.exp(log_w))[cp]

        at_y = np.exp(log_cond_cdf_terms(cop, f_hi[cp], f_lo[cp], log_fm[cp], fy[:, None]))
        share = np.where(below[cp] < 1.0, (at_y - below[cp]) / (1.0 - below[cp]), 0.0)
    return np.clip(np.sum(weights * np.nan_to_num(share), axis=1), 0.0, 1.0)


def _anderson_darling_pvalue(a2: float) -> float:
    """Upper tail of the asymptotic Anderson-Darling law."""
    if not np.isfinite(a2):
        return 0.0
    if a2 <= 0:
        return 1.0
    if a2 < 2.0:
        cdf = math.exp(-1.2337141 / a2) / math.sqrt(a2) * (
            2.00012 + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * a2) * a2) * a2) * a2) * a2
        )
    else:
        cdf = math.exp(-math.exp(
            1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * a2) * a2) * a2) * a2) * a2
        ))
    return float(min(max(1.0 - cdf, 0.0), 1.0))


def anderson_darling_uniform(values) -> tuple[float, float]:
    u = np.sort(np.asarray(values, dtype=float))
    n = u.size
    if np.ptp(u) == 0.0:
        return math.inf, 0.0
    u = np.clip(u, EPS, 1.0 - EPS)
    i = np.arange(1, n + 1)
    a2 = -n - np.mean((2 * i - 1) * (np.log(u) + np.log1p(-u[::-1])))
    return float(a2), _anderson_darling_pvalue(float(a2))


def uniformity_tests(residuals: ResidualSet) -> dict:
    """Kolmogorov-Smirnov, Cramer-von Mises and Anderson-Darling tests against U(0, 1)."""
    values = residuals.values if isinstance(residuals, ResidualSet) else np.asarray(residuals, dtype=float)
    if values.size < MIN_RESIDUALS:
        raise DomainError(f"uniformity tests need at least {MIN_RESIDUALS} residuals, got {values.size}")
    ks = stats.kstest(values, "uniform")
    cvm = stats.cramervonmises(values, "uniform")
    ad, ad_p = anderson_darling_uniform(values)
    return {
        "n": int(values.size),
        "ks": {"statistic": float(ks.statistic), "p_value": float(ks.pvalue)},
        "cvm": {"statistic": float(cvm.statistic), "p_value": float(cvm.pvalue)},
        "ad": {"statistic": ad, "p_value": ad_p},
    }


def qq_normal_scores(residuals: ResidualSet) -> pd.DataFrame:
    """Sorted normal scores against standard normal quantiles at (i - 0.5) / n."""
    scores = np.sort(residuals.normal_scores)
    n = scores.size
    theoretical = special.ndtri((np.arange(1, n + 1) - 0.5) / n) if n else np.empty(0)
    return pd.DataFrame({"theoretical": theoretical, "sample": scores})


def aggregate_fit_curves(model, data: Dataset, n_sims: int = 200, seed: int = 0) -> pd.DataFrame:
    """
    Fitted against empirical CDF of per-policy aggregate loss, with the tail
    transform -log(1 - F) of both.
    """
    model = _model_of(model)
    observed = np.sort(realized_losses(data))
    sample = simulate_portfolio(model, data, n_sims, seed, modified=data.scheme != "complete").aggregates.ravel()
    sample.sort()
    grid = ecdf_grid(observed)["s"].to_numpy()
    empirical = np.searchsorted(observed, grid, side="right") / observed.size
    fitted = np.searchsorted(sample, grid, side="right") / sample.size
    with np.errstate(divide="ignore"):
        return pd.DataFrame({
            "s": grid,
            "empirical": empirical,
            "fitted": fitted,
            "empirical_tail": -np.log1p(-np.minimum(empirical, 1.0 - 1.0 / (2 * observed.size))),
            "fitted_tail": -np.log1p(-np.minimum(fitted, 1.0 - 1.0 / (2 * sample.size))),
        })

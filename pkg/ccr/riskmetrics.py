# ccr/riskmetrics.py
"""
Decision metrics on aggregate losses: moments and coefficient of variation,
VaR, ordered Lorenz curves with Gini indices, Gini correlations against a
premium base, and CRPS scoring of predictive samples.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, stats

from ccr.compound import CompoundModel, Dataset, count_designs, count_law_for, design_row
from ccr.errors import DomainError
from ccr.marginals import CountFamily, LinearPredictor, SeverityFamily, count_moments, severity_moments
from ccr.simulation import policy_stream, simulate_aggregate, simulate_portfolio

logger = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.90, 0.95, 0.99)
BOOTSTRAP_SAMPLES = 500


@dataclass(frozen=True)
class RiskScore:
    policy_id: str
    mean: float
    variance: float

    @property
    def cv(self) -> float:
        """Coefficient of variation R = sd / mean."""
        if not self.mean > 0:
            raise DomainError(f"policy {self.policy_id}: coefficient of variation needs a positive mean")
        return math.sqrt(max(self.variance, 0.0)) / self.mean


@dataclass
class LorenzCurve:
    premium_share: np.ndarray
    loss_share: np.ndarray
    gini: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"premium_share": self.premium_share, "loss_share": self.loss_share})


# --------------------------------------------------------------------------
# moments and VaR
# --------------------------------------------------------------------------

def compound_moments(count: CountFamily, count_mp: LinearPredictor,
                     severity: SeverityFamily, severity_mp: LinearPredictor) -> tuple[float, float]:
    """E[S] = E[N] E[Y] and Var[S] = E[N] Var[Y] + Var[N] E[Y]^2 under independence."""
    en, vn = (float(m) for m in count_moments(count, count_mp))
    ey, vy = (float(m) for m in severity_moments(severity, severity_mp))
    if en == 0.0:
        return 0.0, 0.0
    return en * ey, en * vy + vn * ey**2


def moments_of_S(model: CompoundModel, x: Mapping[str, float], method: str = "analytic",
                 n_sims: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """Mean and variance of the aggregate loss at one covariate point."""
    if method == "analytic":
        if model.spec.copula != "independence":
            raise DomainError("analytic moments need the independence copula; use method='monte_carlo'")
        family, mp = count_law_for(model, x)
        sev, smp = model.severity_law(design_row(model.spec.severity_covariates, x))
        return compound_moments(family, mp, sev, smp)
    if method != "monte_carlo":
        raise DomainError(f"unknown moment method '{method}'")
    if n_sims < 10_000:
        logger.warning(f"⚠️ only {n_sims} draws for Monte Carlo moments")
    s = simulate_aggregate(model, x, n_sims, policy_stream(seed, "moments"))
    return float(np.mean(s)), float(np.var(s, ddof=1))


def var_quantile(sample, alpha: float) -> float:
    """Lower empirical alpha-quantile: the k-th order statistic with k = ceil(alpha n)."""
    sample = np.asarray(sample, dtype=float).ravel()
    if sample.size == 0:
        raise DomainError("VaR of an empty sample")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"VaR level must lie in (0, 1), got {alpha}")
    k = max(1, math.ceil(alpha * sample.size - 1e-12))
    return float(np.partition(sample, k - 1)[k - 1])


def portfolio_var_table(model: CompoundModel, data: Dataset, alphas: Sequence[float] = DEFAULT_ALPHAS,
                        n_sims: int = 10_000, replicates: int = 20, seed: int = 0) -> pd.DataFrame:
    """VaR of the portfolio loss with a 95% interval across replicate simulations."""
    totals = [simulate_portfolio(model, data, n_sims, seed, replicate=r).totals() for r in range(replicates)]
    pooled = np.concatenate(totals)
    rows = []
    for alpha in alphas:
        per_rep = np.array([var_quantile(t, alpha) for t in totals])
        rows.append({
            "alpha": alpha,
            "var": var_quantile(pooled, alpha),
            "ci_lower": float(np.quantile(per_rep, 0.025)),
            "ci_upper": float(np.quantile(per_rep, 0.975)),
        })
    return pd.DataFrame(rows)


def risk_scores(model: CompoundModel, data: Dataset, n_sims: int = 10_000, seed: int = 0,
                analytic: bool = False) -> list[RiskScore]:
    """Mean and variance of S per policy, by simulation or analytically under independence."""
    if analytic:
        if model.spec.copula != "independence":
            raise DomainError("analytic risk scores need the independence copula")
        x_freq, x_zero, x_one = count_designs(model, data)
        x_sev = data.design(model.spec.severity_covariates, "policy")
        scores = []
        for i, pid in enumerate(data.policy_ids):
            family, mp = model.count_law(x_freq[i], None if x_zero is None else x_zero[i],
                                         None if x_one is None else x_one[i])
            sev, smp = model.severity_law(x_sev[i])
            scores.append(RiskScore(str(pid), *compound_moments(family, mp, sev, smp)))
        return scores
    sample = simulate_portfolio(model, data, n_sims, seed)
    means = sample.aggregates.mean(axis=0)
    variances = sample.aggregates.var(axis=0, ddof=1)
    return [RiskScore(str(pid), float(m), float(v)) for pid, m, v in zip(data.policy_ids, means, variances)]


def scores_frame(scores: Sequence[RiskScore]) -> pd.DataFrame:
    return pd.DataFrame([
        {"policy_id": s.policy_id, "mean": s.mean, "variance": s.variance,
         "cv": s.cv if s.mean > 0 else math.nan}
        for s in scores
    ])


# --------------------------------------------------------------------------
# ordered Lorenz curve and Gini
# --------------------------------------------------------------------------

def _ordered_lorenz(order_by, premiums, losses, ids=None) -> LorenzCurve:
    order_by = np.asarray(order_by, dtype=float)
    premiums = np.asarray(premiums, dtype=float)
    losses = np.asarray(losses, dtype=float)
    if not (order_by.shape == premiums.shape == losses.shape) or order_by.ndim != 1:
        raise DomainError("scores, premiums and losses must have the same length")
    if not premiums.sum() > 0 or not losses.sum() > 0:
        raise DomainError("total premium and total loss must be positive")
    ids = np.arange(order_by.size).astype(str) if ids is None else np.asarray(ids).astype(str)
    order = np.lexsort((ids, order_by))
    premium_share = np.concatenate([[0.0], np.cumsum(premiums[order]) / premiums.sum()])
    loss_share = np.concatenate([[0.0], np.cumsum(losses[order]) / losses.sum()])
    area = integrate.trapezoid(loss_share, premium_share)
    return LorenzCurve(premium_share, loss_share, 2.0 * (0.5 - area))


def lorenz_gini(scores, premiums, losses, policy_ids=None) -> LorenzCurve:
    """
    Ordered Lorenz curve sorted by risk score ascending, ties by policy id.

    `scores` is either numeric or a sequence of RiskScore, in which case the
    coefficient of variation orders the policies. A curve below the diagonal
    gives a positive Gini.
    """
    scores = list(scores) if not isinstance(scores, np.ndarray) else scores
    if len(scores) and isinstance(scores[0], RiskScore):
        policy_ids = [s.policy_id for s in scores] if policy_ids is None else policy_ids
        scores = [s.cv for s in scores]
    return _ordered_lorenz(scores, premiums, losses, policy_ids)


def gini_correlation(scores, premium_base, losses, n_boot: int = BOOTSTRAP_SAMPLES, seed: int = 0,
                     policy_ids=None) -> dict:
    """Gini index with policies ordered by relativity score / premium, and its bootstrap standard error."""
    scores = np.asarray(scores, dtype=float)
    premium_base = np.asarray(premium_base, dtype=float)
    losses = np.asarray(losses, dtype=float)
    if np.any(premium_base <= 0):
        raise DomainError("premium base must be positive")
    relativity = scores / premium_base
    gini = _ordered_lorenz(relativity, premium_base, losses, policy_ids).gini
    rng = np.random.default_rng(seed)
    boot = []
    for _ in range(n_boot):
        idx = rng.integers(0, scores.size, scores.size)
        if losses[idx].sum() <= 0:
            continue
        boot.append(_ordered_lorenz(relativity[idx], premium_base[idx], losses[idx]).gini)
    se = float(np.std(boot, ddof=1)) if len(boot) > 1 else math.nan
    return {"gini": gini, "std_error": se, "n_boot": len(boot)}


# --------------------------------------------------------------------------
# CRPS
# --------------------------------------------------------------------------

def crps(sample, realized: float) -> float:
    """Sample CRPS: E|X - x| - E|X - X'| / 2, with the pair term from order statistics."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise DomainError("CRPS of an empty sample")
    weights = 2.0 * np.arange(1, n + 1) - n - 1
    value = np.mean(np.abs(x - realized)) - float(weights @ x) / n**2
    return max(float(value), 0.0)


def realized_losses(data: Dataset) -> np.ndarray:
    return np.bincount(data.claim_policy, weights=data.claim_amount, minlength=len(data))


@dataclass
class CRPSComparison:
    per_policy: pd.DataFrame
    share_a_better: float
    p_value: float

    def summary(self) -> dict:
        return {"policies": int(len(self.per_policy)), "share_a_better": self.share_a_better,
                "p_value": self.p_value}


def crps_comparison(model_a: CompoundModel, model_b: CompoundModel, holdout: Dataset,
                    n_sims: int = 10_000, seed: int = 0) -> CRPSComparison:
    """
    Per-policy CRPS of the predictive law of S given S > 0 for policies with
    claims, the share where model A scores lower and a one-sided binomial test.
    """
    realized = realized_losses(holdout)
    positive = np.flatnonzero(holdout.n > 0)
    if positive.size == 0:
        raise DomainError("holdout has no policy with claims")
    subset = holdout.subset(positive)
    sample_a = simulate_portfolio(model_a, subset, n_sims, seed, positive=True).aggregates
    sample_b = simulate_portfolio(model_b, subset, n_sims, seed, positive=True).aggregates
    rows = []
    for j, i in enumerate(positive):
        a = crps(sample_a[:, j], realized[i])
        b = crps(sample_b[:, j], realized[i])
        rows.append({"policy_id": holdout.policy_ids[i], "realized": realized[i],
                     "crps_a": a, "crps_b": b, "a_better": a < b})
    frame = pd.DataFrame(rows)
    wins = int(frame["a_better"].sum())
    test = stats.binomtest(wins, len(frame), 0.5, alternative="greater")
    share = wins / len(frame)
    logger.info(f"📊 CRPS: model A better for {share:.2%} of {len(frame)} policies (p = {test.pvalue:.4g})")
    return CRPSComparison(frame, share, float(test.pvalue))


def rank_agreement(scores_a, scores_b) -> dict:
    """Spearman correlation of two risk rankings."""
    a = np.asarray([s.cv if isinstance(s, RiskScore) else s for s in scores_a], dtype=float)
    b = np.asarray([s.cv if isinstance(s, RiskScore) else s for s in scores_b], dtype=float)
    if a.shape != b.shape:
        raise DomainError("score vectors differ in length")
    rho, p_value = stats.spearmanr(a, b)
    return {"spearman": float(rho), "p_value": float(p_value)}

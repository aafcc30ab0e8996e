"""Tests for the count chi-square, Cox-Snell residuals and uniformity tests."""

import math

import numpy as np
import pytest
from scipy import special, stats

from ccr.diagnostics import (
    ResidualSet,
    aggregate_fit_curves,
    anderson_darling_uniform,
    cox_snell_residuals,
    pearson_chisq_counts,
    qq_normal_scores,
    uniformity_tests,
)
from ccr.compound import ClaimRecord, Dataset, PolicyRecord, cond_cdf
from ccr.errors import DomainError
from ccr.estimation import fit_independence
from ccr.marginals import severity_cdf
from ccr.simulation import generate_synthetic_dataset, regression_design


@pytest.fixture(scope="module")
def design():
    return regression_design(0.5, size=1500)


@pytest.fixture(scope="module")
def data(design):
    return generate_synthetic_dataset(design, np.random.default_rng(31))


def test_count_chisq_table(design, data):
    result = pearson_chisq_counts(design.model, data, bins=4)
    table = result.table
    assert table["count"].tolist() == ["0", "1", "2", "3", "4", ">=5"]
    assert table["observed"].sum() == len(data)
    assert table["expected"].sum() == pytest.approx(len(data), rel=1e-9)
    assert result.df == 5
    assert 0.0 <= result.p_value <= 1.0
    with pytest.raises(DomainError):
        pearson_chisq_counts(design.model, data, bins=0)


def test_residuals_are_uniform_under_true_model(design, data):
    residuals = cox_snell_residuals(design.model, data)
    assert len(residuals) == data.n_claims
    tests = uniformity_tests(residuals)
    assert tests["n"] == data.n_claims
    assert tests["ks"]["statistic"] < 0.1
    assert set(tests) == {"n", "ks", "cvm", "ad"}
    frame = residuals.to_frame()
    assert list(frame.columns) == ["policy_id", "claim", "residual", "normal_score"]


def test_residuals_detect_misfit(design, data):
    wrong = design.model.with_params(design.params.replace({"severity.intercept": 6.0}))
    tests = uniformity_tests(cox_snell_residuals(wrong, data))
    assert tests["ks"]["statistic"] > 0.1
    assert tests["ks"]["p_value"] < 1e-6
    assert tests["ad"]["p_value"] < 1e-3


def test_censored_residuals_skip_limited_claims():
    design = regression_design(0.5, "censored", size=400, deductible=50.0, limit=5_000.0)
    data = generate_synthetic_dataset(design, np.random.default_rng(4))
    residuals = cox_snell_residuals(design.model, data)
    interior = int((~data.claim_below & ~data.claim_at_limit).sum())
    assert len(residuals) == interior
    assert np.all((residuals.values > 0) & (residuals.values < 1))


def test_anderson_darling_critical_values():
    from ccr.diagnostics import _anderson_darling_pvalue

    assert _anderson_darling_pvalue(1.933) == pytest.approx(0.10, abs=0.005)
    assert _anderson_darling_pvalue(2.492) == pytest.approx(0.05, abs=0.005)
    assert _anderson_darling_pvalue(3.857) == pytest.approx(0.01, abs=0.002)
    assert anderson_darling_uniform(np.full(10, 0.3)) == (math.inf, 0.0)
    u = (np.arange(1, 201) - 0.5) / 200
    statistic, p_value = anderson_darling_uniform(u)
    assert statistic < 0.1
    assert p_value > 0.99


def test_uniformity_needs_enough_residuals():
    with pytest.raises(DomainError):
        uniformity_tests(ResidualSet(np.linspace(0.1, 0.9, 5), np.array(["p"] * 5), np.arange(5)))


def test_qq_scores_and_aggregate_curves(design, data):
    subset = data.subset(np.arange(200))
    residuals = cox_snell_residuals(design.model, subset)
    qq = qq_normal_scores(residuals)
    assert list(qq.columns) == ["theoretical", "sample"]
    assert qq["sample"].is_monotonic_increasing
    assert len(qq) == len(residuals)
    curves = aggregate_fit_curves(design.model, subset, n_sims=50, seed=1)
    assert list(curves.columns) == ["s", "empirical", "fitted", "empirical_tail", "fitted_tail"]
    assert curves["empirical"].between(0, 1).all() and curves["fitted"].between(0, 1).all()
    assert curves["empirical"].iloc[-1] == 1.0


def test_truncated_residual_mixes_over_unobserved_count(design):
    model = design.model
    x = {"x1": 0.4, "x2": 0.0}
    d, payments = 50.0, (120.0, 30.0)
    record = PolicyRecord("t", x, 2, tuple(ClaimRecord(p) for p in payments), deductible=d, scheme="truncated")
    residuals = cox_snell_residuals(model, Dataset([record], "truncated"))

    counts = stats.poisson(math.exp(-1.5 + 2.5 * 0.4))
    weights, shares = [], []
    for m in range(2, 40):
        below = float(cond_cdf(model, x, m, d))
        weights.append(counts.pmf(m) * special.comb(m, 2) * (1 - below) ** 2 * below ** (m - 2))
        shares.append([(float(cond_cdf(model, x, m, p + d)) - below) / (1 - below) for p in payments])
    expected = np.dot(weights, shares) / np.sum(weights)
    assert residuals.values == pytest.approx(expected, rel=1e-8)


def test_truncated_residuals_under_independence_and_truth():
    design = regression_design(0.5, "truncated", size=1500, deductible=50.0)
    data = generate_synthetic_dataset(design, np.random.default_rng(6))
    residuals = cox_snell_residuals(design.model, data)
    assert len(residuals) == int((~data.claim_at_limit).sum())
    assert uniformity_tests(residuals)["ks"]["statistic"] < 0.05

    independent = fit_independence(design.spec, data, compute_se=False).model
    sev, smp = independent.severity_law(data.design(design.spec.severity_covariates, "claim"))
    rows = ~data.claim_at_limit
    d = data.deductible[data.claim_policy]
    f_d = severity_cdf(sev, smp, d)
    direct = (severity_cdf(sev, smp, data.claim_amount + d) - f_d) / (1 - f_d)
    assert cox_snell_residuals(independent, data).values == pytest.approx(direct[rows], rel=1e-9)


@pytest.mark.slow
def test_residual_uniformity_calibration():
    design = regression_design(0.9, size=2000)
    true_rejections, misfit_rejections = 0, 0
    true_ks, misfit_ks = [], []
    for r in range(40):
        data = generate_synthetic_dataset(design, np.random.default_rng([91, r]))
        truth = uniformity_tests(cox_snell_residuals(design.model, data))["ks"]
        independent = fit_independence(design.spec, data, compute_se=False)
        misfit = uniformity_tests(cox_snell_residuals(independent, data))["ks"]
        true_rejections += truth["p_value"] < 0.05
        misfit_rejections += misfit["p_value"] < 0.05
        true_ks.append(truth["statistic"])
        misfit_ks.append(misfit["statistic"])
    assert true_rejections <= 6
    assert np.mean(misfit_ks) > np.mean(true_ks)
    assert misfit_rejections >= 10

"""Tests for the two-stage, full and independence fits and for model comparison."""

import dataclasses
import json
import math

import numpy as np
import pandas as pd
import pytest

from ccr.compound import CompoundModelSpec, portfolio_loglik
from ccr.errors import DomainError, EstimationError
from ccr.estimation import (
    FitResult,
    fit_copula_variants,
    fit_full,
    fit_independence,
    fit_two_stage,
    likelihood_ratio_test,
    model_selection,
    numerical_hessian,
    starting_values,
)
from ccr.recovery import run_recovery_study
from ccr.simulation import generate_synthetic_dataset, regression_design


@pytest.fixture(scope="module")
def design():
    return regression_design(0.5, size=400)


@pytest.fixture(scope="module")
def data(design):
    return generate_synthetic_dataset(design, np.random.default_rng(2024))


@pytest.fixture(scope="module")
def independence_fit(design, data):
    return fit_independence(design.spec, data)


@pytest.fixture(scope="module")
def two_stage_fit(design, data):
    return fit_two_stage(design.spec, data, compute_se=False)


@pytest.fixture(scope="module")
def full_fit(design, data):
    return fit_full(design.spec, data, compute_se=False)


def test_independence_fit_solves_poisson_score(data, independence_fit):
    assert independence_fit.converged
    assert independence_fit.label == "Independence"
    beta = independence_fit.params.array("frequency", ("intercept", "x1", "x2"))
    x = data.design(("x1", "x2"))
    mu = np.exp(x @ beta)
    assert mu.sum() == pytest.approx(data.n.sum(), rel=1e-3)
    assert (x[:, 1] * mu).sum() == pytest.approx((x[:, 1] * data.n).sum(), rel=1e-3)
    assert np.all(np.isfinite(independence_fit.std_errors))


def test_two_stage_count_block_matches_independence(independence_fit, two_stage_fit):
    for name in ("intercept", "x1", "x2"):
        key = f"frequency.{name}"
        assert two_stage_fit.params[key] == pytest.approx(independence_fit.params[key], abs=1e-3)
    assert "stage1" in two_stage_fit.stage_logliks
    assert two_stage_fit.se_status == "stage_conditional"


def test_full_fit_dominates(design, data, independence_fit, two_stage_fit, full_fit):
    assert full_fit.loglik >= independence_fit.loglik - 1e-6
    assert full_fit.loglik >= two_stage_fit.loglik - 1e-6
    assert full_fit.loglik >= portfolio_loglik(design.model, data) - 1e-6
    assert full_fit.kendall_tau() > 0
    assert full_fit.n_params == independence_fit.n_params + 1


def test_model_selection_and_lrt(independence_fit, full_fit):
    comparison = model_selection([independence_fit, full_fit], nested=(0, 1))
    table = comparison.table
    assert list(table["model"]) == ["Independence", "Gaussian"]
    assert sorted(table["aic_rank"]) == [1, 2]
    assert table.loc[1, "aic"] == pytest.approx(-2 * full_fit.loglik + 2 * full_fit.n_params)
    lrt = comparison.lrt
    assert lrt["df"] == 1
    assert lrt["statistic"] == pytest.approx(max(2 * (full_fit.loglik - independence_fit.loglik), 0.0))
    assert 0.0 <= lrt["p_value"] <= 1.0
    with pytest.raises(EstimationError):
        likelihood_ratio_test(full_fit, independence_fit)


def test_model_selection_rejects_mixed_datasets(independence_fit, full_fit):
    other = dataclasses.replace(independence_fit, fingerprint="0" * 64)
    with pytest.raises(EstimationError):
        model_selection([other, full_fit])
    with pytest.raises(EstimationError):
        model_selection([])


def test_fit_result_serialisation(full_fit):
    payload = json.loads(json.dumps(full_fit.to_dict()))
    assert payload["dataset_sha256"] == full_fit.fingerprint
    assert payload["parameters"]["copula"][0]["name"] == "theta"
    restored = FitResult.from_dict(payload)
    assert restored.label == full_fit.label
    assert restored.params.keys == full_fit.params.keys
    assert restored.params.values == pytest.approx(full_fit.params.values)
    assert restored.aic == pytest.approx(full_fit.aic)
    assert restored.converged == full_fit.converged


def test_observed_information_for_poisson_intercept(data):
    spec = CompoundModelSpec("poisson", "gamma", "independence")
    fit = fit_independence(spec, data)
    assert fit.params["frequency.intercept"] == pytest.approx(math.log(data.n.mean()), abs=1e-4)
    assert fit.std_errors[0] == pytest.approx(1.0 / math.sqrt(data.n.sum()), rel=1e-3)
    assert fit.se_status == "ok"


def test_numerical_hessian_of_quadratic():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    hess = numerical_hessian(lambda z: -0.5 * z @ a @ z, np.array([0.3, -1.2]))
    assert hess == pytest.approx(-a, abs=1e-6)


def test_starting_values(design, data):
    start = starting_values(design.spec, data)
    assert start.keys == [f"{b}.{n}" for b, n, _, _ in design.spec.layout()]
    assert -1.0 < start["copula.theta"] < 1.0
    assert start["frequency.intercept"] == pytest.approx(math.log(data.n.mean()))
    assert start["severity.shape"] > 0


def test_two_stage_rejects_per_payment_data(design):
    truncated = generate_synthetic_dataset(design.with_scheme("truncated"), np.random.default_rng(5))
    with pytest.raises(EstimationError):
        fit_two_stage(design.spec, truncated)


def test_copula_variant_table(design, data):
    comparison = fit_copula_variants(design.spec, data, variants=[("gaussian", 0), ("frank", 0)],
                                     method="TwoStage")
    table = comparison.table
    assert list(table["model"]) == ["Gaussian", "Frank"]
    assert {"kendall_tau", "loglik", "aic", "bic", "pearson_chisq"} <= set(table.columns)
    assert table["kendall_tau"].gt(0).all()


def test_recovery_study_is_reproducible():
    design = regression_design(0.3, size=120)
    serial = run_recovery_study(design, replications=2, seed=9, methods=("independence",), threads=1)
    pooled = run_recovery_study(design, replications=2, seed=9, methods=("independence",), threads=2)
    pd.testing.assert_frame_equal(serial.estimates, pooled.estimates)
    assert set(serial.table["parameter"]) == {
        "frequency.intercept", "frequency.x1", "frequency.x2",
        "severity.intercept", "severity.x1", "severity.x2", "severity.shape",
    }
    assert serial.table["n"].eq(2).all()
    assert ("", "true") in serial.wide().columns
    with pytest.raises(DomainError):
        run_recovery_study(design, replications=0)
    with pytest.raises(DomainError):
        run_recovery_study(design, replications=1, methods=("bayes",))


@pytest.mark.slow
def test_independence_fit_biases_severity_under_strong_dependence():
    design = regression_design(0.9, size=400)
    report = run_recovery_study(design, replications=10, seed=1, methods=("independence", "full"), threads=2)
    table = report.table.set_index(["method", "parameter"])
    ind_bias = abs(table.loc[("independence", "severity.intercept"), "mean"] - 5.0)
    full_bias = abs(table.loc[("full", "severity.intercept"), "mean"] - 5.0)
    assert ind_bias > full_bias


def test_censored_full_fit_converges():
    design = regression_design(0.5, "censored", size=300, deductible=50.0, limit=5_000.0)
    sample = generate_synthetic_dataset(design, np.random.default_rng(12))
    independence = fit_independence(design.spec, sample, compute_se=False)
    full = fit_full(design.spec, sample, compute_se=False)
    assert full.converged and full.scheme == "censored"
    assert full.loglik >= independence.loglik - 1e-6
    assert full.kendall_tau() > 0


@pytest.mark.slow
@pytest.mark.parametrize("scheme", ["censored", "truncated"])
def test_full_fit_recovers_modified_designs(scheme):
    design = regression_design(0.5, scheme, size=500)
    report = run_recovery_study(design, replications=20, seed=3, methods=("full",), threads=4)
    table = report.table.set_index("parameter")
    assert table["rel_bias"].abs().max() < 0.1
    assert report.estimates["converged"].mean() >= 0.9


@pytest.mark.slow
def test_truncated_independence_fit_biases_frequency_under_strong_dependence():
    design = regression_design(0.9, "truncated", size=500)
    report = run_recovery_study(design, replications=20, seed=5, methods=("independence", "full"), threads=4)
    table = report.table.set_index(["method", "parameter"])
    ind_bias = abs(table.loc[("independence", "frequency.x2"), "mean"] - 1.0)
    full_bias = abs(table.loc[("full", "frequency.x2"), "mean"] - 1.0)
    assert ind_bias > full_bias


@pytest.mark.slow
def test_likelihood_ratio_size_under_independence():
    design = regression_design(0.0, size=300)
    rejections = 0
    for r in range(40):
        sample = generate_synthetic_dataset(design, np.random.default_rng([77, r]))
        restricted = fit_independence(design.spec, sample, compute_se=False)
        full = fit_full(design.spec, sample, compute_se=False, seed=r)
        rejections += likelihood_ratio_test(restricted, full)["p_value"] < 0.05
    assert rejections <= 6

"""Tests for seeded simulation, coverage modification, conditional quantiles and synthetic designs."""

import math

import numpy as np
import pytest
from scipy import stats

from ccr.compound import cond_cdf
from ccr.errors import DomainError
from ccr.simulation import (
    apply_coverage,
    conditional_density_curves,
    conditional_mean,
    conditional_quantile,
    dependence_experiment,
    ecdf_grid,
    experiment_model,
    generate_synthetic_dataset,
    policy_stream,
    prediction_interval,
    property_fund_design,
    regression_design,
    simulate_aggregate,
    simulate_policy,
    simulate_portfolio,
)


def test_policy_streams_are_keyed():
    a = policy_stream(7, "P00001", 0).random(5)
    assert np.array_equal(a, policy_stream(7, "P00001", 0).random(5))
    assert not np.array_equal(a, policy_stream(7, "P00002", 0).random(5))
    assert not np.array_equal(a, policy_stream(7, "P00001", 1).random(5))
    assert not np.array_equal(a, policy_stream(8, "P00001", 0).random(5))


def test_apply_coverage():
    y = np.array([30.0, 500.0, 20_000.0])
    paid, at_limit, keep = apply_coverage(y, 50.0, 10_000.0, "censored")
    assert paid.tolist() == [0.0, 450.0, 9_950.0]
    assert at_limit.tolist() == [False, False, True]
    assert keep.all()
    _, _, keep = apply_coverage(y, 50.0, 10_000.0, "truncated")
    assert keep.tolist() == [False, True, True]
    paid, at_limit, keep = apply_coverage(y, 50.0, 10_000.0, "complete")
    assert paid.tolist() == y.tolist() and keep.all() and not at_limit.any()
    with pytest.raises(DomainError):
        apply_coverage(y, 0.0, math.inf, "grouped")


def test_independent_aggregate_matches_tweedie_moments():
    model = experiment_model("gaussian", 0.0)
    s = simulate_aggregate(model, {}, 200_000, policy_stream(3, "tweedie"))
    assert s.mean() == pytest.approx(1000.0, abs=15.0)
    assert s.var() == pytest.approx(1.5e6, rel=0.03)
    assert np.mean(s == 0) == pytest.approx(math.exp(-1.0), abs=0.005)


def test_dependent_aggregate_mean_matches_conditional_law():
    model = experiment_model("gaussian", 0.5)
    weights = stats.poisson(1.0).pmf(np.arange(1, 12))
    expected = sum(n * w * conditional_mean(model, {}, n) for n, w in zip(range(1, 12), weights))
    s = simulate_aggregate(model, {}, 100_000, policy_stream(4, "dependent"))
    assert s.mean() == pytest.approx(expected, rel=0.02)
    assert expected > 1000.0


def test_simulate_policy_applies_coverage():
    model = experiment_model("clayton", 0.4)
    rng = np.random.default_rng(12)
    draws = [simulate_policy(model, {}, 100.0, 2_000.0, "censored", rng, "p") for _ in range(300)]
    for draw in draws:
        assert len(draw.amounts) == draw.n == len(draw.ground_up)
        assert all(0.0 <= a <= 1_900.0 for a in draw.amounts)
        assert all(flag == (a == 1_900.0) for a, flag in zip(draw.amounts, draw.at_limit))
    truncated = [simulate_policy(model, {}, 100.0, scheme="truncated", rng=rng) for _ in range(300)]
    assert all(a > 0 for draw in truncated for a in draw.amounts)


def test_simulate_portfolio_is_order_independent():
    design = regression_design(0.5, "censored", size=30)
    data = generate_synthetic_dataset(design, np.random.default_rng(1))
    model = design.model
    sample = simulate_portfolio(model, data, 200, seed=5)
    assert sample.aggregates.shape == (200, 30)
    assert sample.totals().shape == (200,)
    again = simulate_portfolio(model, data, 200, seed=5)
    assert np.array_equal(sample.aggregates, again.aggregates)
    part = simulate_portfolio(model, data.subset([4, 17]), 200, seed=5)
    assert np.array_equal(part.aggregates, sample.aggregates[:, [4, 17]])
    frame = sample.to_frame()
    assert list(frame.columns) == ["replication", "policy_id", "n", "s"]
    assert len(frame) == 200 * 30


def test_portfolio_positive_and_modified_draws():
    design = regression_design(0.5, "censored", size=20)
    data = generate_synthetic_dataset(design, np.random.default_rng(2))
    model = design.model
    positive = simulate_portfolio(model, data, 100, seed=3, positive=True)
    assert positive.counts.min() >= 1
    ground = simulate_portfolio(model, data, 100, seed=3)
    modified = simulate_portfolio(model, data, 100, seed=3, modified=True)
    assert np.all(modified.aggregates <= ground.aggregates + 1e-9)
    assert np.array_equal(modified.counts, ground.counts)
    with pytest.raises(DomainError):
        simulate_portfolio(model, data, 0, seed=3)


def test_conditional_quantile_and_interval():
    model = experiment_model("gumbel", 0.5)
    for n in (1, 3):
        q = conditional_quantile(model, {}, n, np.array([0.1, 0.5, 0.9]))
        assert cond_cdf(model, {}, n, q) == pytest.approx([0.1, 0.5, 0.9], abs=1e-9)
    interval = prediction_interval(model, {}, 2, level=0.9)
    assert interval["lower"] < interval["mean"] < interval["upper"]
    assert float(cond_cdf(model, {}, 2, interval["upper"])) == pytest.approx(0.95, abs=1e-9)
    independent = experiment_model("gaussian", 0.0)
    assert conditional_quantile(independent, {}, 2, 0.5) == pytest.approx(stats.gamma(2.0, scale=500.0).median())
    with pytest.raises(DomainError):
        conditional_quantile(model, {}, 1, 1.0)


def test_ecdf_grid():
    sample = np.random.default_rng(0).gamma(2.0, 500.0, size=5000)
    frame = ecdf_grid(sample, points=100)
    assert list(frame.columns) == ["s", "ecdf"]
    assert frame["s"].is_monotonic_increasing
    assert frame["ecdf"].iloc[-1] == 1.0
    with pytest.raises(DomainError):
        ecdf_grid([])


def test_dependence_experiment_orders_tail_by_tau():
    experiment = dependence_experiment(taus=(-0.5, 0.0, 0.5), n_sims=20_000, seed=1)
    summary = experiment.summary.set_index("tau")
    assert set(experiment.curves) == {"gaussian_tau-0.5", "gaussian_tau+0", "gaussian_tau+0.5"}
    assert summary.loc[0.0, "copula"] == "Independence"
    assert summary.loc[-0.5, "mean"] < summary.loc[0.5, "mean"]
    assert summary.loc[-0.5, "q99"] < summary.loc[0.5, "q99"]
    assert summary.loc[-0.5, "variance"] < summary.loc[0.5, "variance"]
    assert summary["p_zero"].tolist() == pytest.approx([math.exp(-1.0)] * 3, abs=0.015)


def test_conditional_density_curves():
    model = experiment_model("frank", 0.3)
    frame = conditional_density_curves(model, {}, [1, 4], np.linspace(10.0, 3000.0, 50))
    assert list(frame.columns) == ["y", "marginal", "given_occurrence", "n1", "n4"]
    assert (frame.drop(columns="y") >= 0).all().all()


def test_synthetic_designs():
    design = regression_design(0.5)
    assert design.name == "regression_rho0.5"
    censored = generate_synthetic_dataset(design.with_scheme("censored", 50.0, 10_000.0), np.random.default_rng(6))
    assert censored.scheme == "censored"
    assert np.all(censored.claim_amount <= 9_950.0)
    truncated = generate_synthetic_dataset(design.with_scheme("truncated"), np.random.default_rng(6))
    assert np.all(truncated.claim_amount > 0)
    assert truncated.n.sum() <= censored.n.sum()

    fund = property_fund_design(size=200)
    data = generate_synthetic_dataset(fund, np.random.default_rng(8), year=2010)
    assert {"fire", "water", "summer"} <= set(data.claim_columns)
    assert set(data.years) == {2010}

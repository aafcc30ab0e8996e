"""Tests for policy records, datasets, the conditional severity law and the three likelihoods."""

import itertools
import math

import numpy as np
import pandas as pd
import pytest
from scipy import integrate, special, stats

from ccr.compound import (
    ClaimRecord,
    CompoundModel,
    CompoundModelSpec,
    Dataset,
    PolicyRecord,
    cond_cdf,
    cond_pdf,
    cond_pdf_given_occurrence,
    loglik_censored,
    loglik_complete,
    loglik_truncated,
    policy_logliks,
    portfolio_loglik,
)
from ccr.copulas import TABLE_VARIANTS, CopulaSpec, copula_cdf, copula_hfunc, param_from_tau
from ccr.errors import DataValidationError, DomainError, NumericError

LAM, MEAN, SHAPE = 1.5, 500.0, 2.0


def _model(copula="gaussian", theta=0.4, rotation=0, **params):
    spec = CompoundModelSpec("poisson", "gamma", copula, rotation)
    values = {
        "frequency.intercept": math.log(LAM),
        "severity.intercept": math.log(MEAN),
        "severity.shape": SHAPE,
        **params,
    }
    if copula != "independence":
        values["copula.theta"] = theta
    return CompoundModel(spec, spec.default_params(values))


def _gamma():
    return stats.gamma(SHAPE, scale=MEAN / SHAPE)


def _claims(*amounts, at_limit=()):
    return tuple(ClaimRecord(a, at_limit=i in at_limit) for i, a in enumerate(amounts))


def _complete_portfolio():
    return Dataset([
        PolicyRecord("a", {}, 0),
        PolicyRecord("b", {}, 1, _claims(320.0)),
        PolicyRecord("c", {}, 3, _claims(80.0, 1250.0, 410.0)),
        PolicyRecord("d", {}, 2, _claims(35.0, 990.0)),
    ])


# --------------------------------------------------------------------------
# records and datasets
# --------------------------------------------------------------------------

def test_policy_record_validation():
    with pytest.raises(DataValidationError) as err:
        PolicyRecord("p1", {}, 2, _claims(10.0))
    assert err.value.policy_ids == ["p1"]
    with pytest.raises(DataValidationError):
        PolicyRecord("p2", {}, 1, _claims(0.0))
    with pytest.raises(DataValidationError):
        PolicyRecord("p3", {}, 1, _claims(500.0, at_limit=(0,)), deductible=100.0, limit=1000.0, scheme="censored")
    with pytest.raises(DataValidationError):
        PolicyRecord("p4", {}, 1, _claims(900.0), deductible=100.0, limit=1000.0, scheme="censored")
    with pytest.raises(DataValidationError):
        PolicyRecord("p5", {}, 1, _claims(0.0), deductible=100.0, scheme="truncated")
    with pytest.raises(DataValidationError):
        PolicyRecord("p6", {}, 0, deductible=500.0, limit=500.0, scheme="censored")


def _frames():
    policies = pd.DataFrame({
        "policy_id": ["p1", "p2", "p3"],
        "year": [2010, 2010, 2011],
        "n_claims": [2, 0, 1],
        "deductible": [0.0, 0.0, 0.0],
        "size": [1.0, 0.5, 2.0],
    })
    claims = pd.DataFrame({
        "policy_id": ["p1", "p1", "p3"],
        "year": [2010, 2010, 2011],
        "amount": [120.0, 75.0, 980.0],
        "peril": [1.0, 0.0, 1.0],
    })
    return policies, claims


def test_dataset_from_frames_and_designs():
    data = Dataset.from_frames(*_frames())
    assert len(data) == 3
    assert data.n_claims == 3
    assert data.policy_columns == ["size"]
    assert data.claim_columns == ["size", "peril"]
    assert data.design(["size"]).tolist() == [[1.0, 1.0], [1.0, 0.5], [1.0, 2.0]]
    assert data.design(["size", "peril"], "claim")[:, 2].tolist() == [1.0, 0.0, 1.0]
    with pytest.raises(DataValidationError):
        data.design(["peril"])


def test_dataset_rejects_orphans_and_count_mismatch():
    policies, claims = _frames()
    orphan = pd.concat([claims, pd.DataFrame({"policy_id": ["zz"], "year": [2010], "amount": [5.0], "peril": [0.0]})])
    with pytest.raises(DataValidationError) as err:
        Dataset.from_frames(policies, orphan)
    assert err.value.policy_ids == ["zz"]
    policies.loc[1, "n_claims"] = 1
    with pytest.raises(DataValidationError):
        Dataset.from_frames(policies, claims)


def test_split_fingerprint_and_frames():
    data = Dataset.from_frames(*_frames())
    train, test = data.split_by_year(2011)
    assert list(train.policy_ids) == ["p1", "p2"]
    assert list(test.policy_ids) == ["p3"]
    with pytest.raises(DataValidationError):
        data.split_by_year(1999)

    again = Dataset.from_frames(*data.to_frames())
    assert again.fingerprint() == data.fingerprint()
    policies, claims = _frames()
    claims.loc[0, "amount"] = 121.0
    assert Dataset.from_frames(policies, claims).fingerprint() != data.fingerprint()


def test_spec_layout_and_parameter_check():
    spec = CompoundModelSpec("zoinegbin", "gb2", "t", frequency_covariates=("x",), zero_covariates=("z",))
    keys = [f"{b}.{n}" for b, n, _, _ in spec.layout()]
    assert keys == [
        "frequency.intercept", "frequency.x", "frequency.dispersion",
        "frequency.zero.intercept", "frequency.zero.z", "frequency.one.intercept",
        "severity.intercept", "severity.shape1", "severity.shape2", "severity.sigma",
        "copula.theta", "copula.df",
    ]
    with pytest.raises(DomainError):
        CompoundModel(CompoundModelSpec(), CompoundModelSpec(copula="independence").default_params())
    with pytest.raises(DomainError):
        CompoundModelSpec(copula="gaussian", rotation=90)
    with pytest.raises(DataValidationError):
        spec.check_columns(["x"], ["x"])


# --------------------------------------------------------------------------
# conditional severity law
# --------------------------------------------------------------------------

@pytest.mark.parametrize("copula,theta,rotation", [
    ("gaussian", 0.5, 0),
    ("frank", -4.0, 0),
    ("clayton", 1.5, 90),
])
def test_conditional_law_mixes_back_to_marginal(copula, theta, rotation):
    model = _model(copula, theta, rotation)
    y = np.array([150.0, 500.0, 1800.0])
    weights = stats.poisson(LAM).pmf(np.arange(30))
    mixture = sum(w * cond_cdf(model, {}, n, y) for n, w in enumerate(weights))
    assert mixture == pytest.approx(_gamma().cdf(y), abs=1e-6)


def test_conditional_density_integrates_to_conditional_cdf():
    model = _model("gumbel", 1.8, 270)
    for n in (1, 3):
        mass, _ = integrate.quad(lambda y: float(cond_pdf(model, {}, n, y)), 100.0, 900.0, epsabs=1e-12)
        expected = cond_cdf(model, {}, n, 900.0) - cond_cdf(model, {}, n, 100.0)
        assert mass == pytest.approx(float(expected), rel=1e-6)


def test_density_given_occurrence():
    model = _model("gaussian", 0.6)
    total, _ = integrate.quad(lambda y: float(cond_pdf_given_occurrence(model, {}, y)), 0.0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)
    weights = stats.poisson(LAM).pmf(np.arange(1, 30))
    mixed = sum(w * cond_pdf(model, {}, n, 700.0) for n, w in zip(range(1, 30), weights)) / weights.sum()
    assert float(cond_pdf_given_occurrence(model, {}, 700.0)) == pytest.approx(float(mixed), rel=1e-6)


def test_positive_dependence_shifts_large_counts_up():
    model = _model("gaussian", 0.7)
    assert cond_cdf(model, {}, 4, 500.0) < _gamma().cdf(500.0) < cond_cdf(model, {}, 0, 500.0)


def test_independence_conditional_is_marginal():
    model = _model("independence")
    y = np.array([50.0, 700.0])
    assert cond_cdf(model, {}, 2, y) == pytest.approx(_gamma().cdf(y))
    assert cond_pdf(model, {}, 2, y) == pytest.approx(_gamma().pdf(y))
    with pytest.raises(DomainError):
        cond_cdf(model, {}, -1, y)


# --------------------------------------------------------------------------
# likelihoods
# --------------------------------------------------------------------------

def test_independence_loglik_separates():
    data = _complete_portfolio()
    expected = stats.poisson(LAM).logpmf(data.n).sum() + _gamma().logpdf(data.claim_amount).sum()
    assert portfolio_loglik(_model("independence"), data) == pytest.approx(expected, rel=1e-12)


def test_zero_correlation_matches_independence():
    data = _complete_portfolio()
    assert portfolio_loglik(_model("gaussian", 0.0), data) == pytest.approx(
        portfolio_loglik(_model("independence"), data), rel=1e-7
    )
    assert portfolio_loglik(_model("gaussian", 0.5), data) != pytest.approx(
        portfolio_loglik(_model("independence"), data), rel=1e-4
    )


def test_censored_loglik_closed_form_under_independence():
    record = PolicyRecord(
        "c1", {}, 3, _claims(0.0, 300.0, 1900.0, at_limit=(2,)),
        deductible=100.0, limit=2000.0, scheme="censored",
    )
    g = _gamma()
    expected = stats.poisson(LAM).logpmf(3) + g.logcdf(100.0) + g.logpdf(400.0) + g.logsf(2000.0)
    assert loglik_censored(_model("independence"), record) == pytest.approx(expected, rel=1e-12)


def test_censored_without_coverage_equals_complete():
    amounts = (40.0, 610.0)
    complete = PolicyRecord("x", {}, 2, _claims(*amounts))
    censored = PolicyRecord("x", {}, 2, _claims(*amounts), scheme="censored")
    model = _model("frank", 3.0)
    assert loglik_censored(model, censored) == pytest.approx(loglik_complete(model, complete), rel=1e-12)


def test_truncated_without_deductible_equals_complete():
    amounts = (40.0, 610.0, 75.0)
    complete = PolicyRecord("x", {}, 3, _claims(*amounts))
    truncated = PolicyRecord("x", {}, 3, _claims(*amounts), scheme="truncated")
    model = _model("gaussian", 0.45)
    assert loglik_truncated(model, truncated) == pytest.approx(loglik_complete(model, complete), rel=1e-10)


def test_truncated_closed_form_under_independence():
    d = 100.0
    g = _gamma()
    f_d = g.cdf(d)
    record = PolicyRecord("t1", {}, 2, _claims(250.0, 40.0), deductible=d, scheme="truncated")
    expected = (-LAM * (1 - f_d) + 2 * math.log(LAM) - math.log(2)
                + g.logpdf(350.0) + g.logpdf(140.0))
    assert loglik_truncated(_model("independence"), record) == pytest.approx(expected, rel=1e-10)
    empty = PolicyRecord("t0", {}, 0, deductible=d, scheme="truncated")
    assert loglik_truncated(_model("independence"), empty) == pytest.approx(-LAM * (1 - f_d), rel=1e-10)


def test_truncated_matches_direct_series_under_dependence():
    d = 150.0
    model = _model("clayton", 2.0, 270)
    payments = (220.0, 60.0)
    record = PolicyRecord("t2", {}, 2, _claims(*payments), deductible=d, scheme="truncated")
    n = 2
    total = 0.0
    for m in range(n, n + 26):
        term = stats.poisson(LAM).pmf(m) * special.comb(m, n)
        for y in payments:
            term *= float(cond_pdf(model, {}, m, y + d))
        term *= float(cond_cdf(model, {}, m, d)) ** (m - n)
        total += term
    assert loglik_truncated(model, record) == pytest.approx(math.log(total), rel=1e-8)


def test_truncated_series_cap_raises():
    spec = CompoundModelSpec("poisson", "gamma", "independence")
    model = CompoundModel(spec, spec.default_params({
        "frequency.intercept": math.log(1000.0),
        "severity.intercept": math.log(MEAN),
        "severity.shape": SHAPE,
    }))
    record = PolicyRecord("big", {}, 1, _claims(10.0), deductible=5000.0, scheme="truncated")
    with pytest.raises(NumericError):
        loglik_truncated(model, record)


def test_scheme_mismatch_and_policy_logliks():
    model = _model()
    with pytest.raises(DataValidationError):
        loglik_truncated(model, PolicyRecord("x", {}, 0))
    data = _complete_portfolio()
    values = policy_logliks(model, data)
    assert values.shape == (4,)
    assert values[0] == pytest.approx(-LAM)
    assert math.fsum(values) == pytest.approx(portfolio_loglik(model, data))


# --------------------------------------------------------------------------
# likelihoods against a direct transcription
# --------------------------------------------------------------------------

def _conditional_by_hand(copula: CopulaSpec, m: int, y: float) -> tuple[float, float]:
    """F_{Y|N}(y|m) and f_{Y|N}(y|m) written out from the copula and the Poisson-gamma marginals."""
    counts, g = stats.poisson(LAM), _gamma()
    f_m, hi, lo = counts.pmf(m), counts.cdf(m), counts.cdf(m - 1)
    v = g.cdf(y)
    cdf = (float(copula_cdf(copula, hi, v)) - float(copula_cdf(copula, lo, v))) / f_m
    pdf = g.pdf(y) * (float(copula_hfunc(copula, hi, v)) - float(copula_hfunc(copula, lo, v))) / f_m
    return min(max(cdf, 0.0), 1.0), max(pdf, 0.0)


def _censored_by_hand(copula: CopulaSpec, record: PolicyRecord) -> float:
    n, d, l = record.n, record.deductible, record.limit
    total = stats.poisson(LAM).logpmf(n)
    for claim in record.claims:
        if claim.at_limit:
            total += math.log(1.0 - _conditional_by_hand(copula, n, l)[0])
        elif claim.amount == 0.0:
            total += math.log(_conditional_by_hand(copula, n, d)[0])
        else:
            total += math.log(_conditional_by_hand(copula, n, claim.amount + d)[1])
    return total


def _truncated_by_hand(copula: CopulaSpec, record: PolicyRecord, extra: int = 40) -> float:
    n, d, l = record.n, record.deductible, record.limit
    total = 0.0
    for m in range(n, n + extra):
        term = stats.poisson(LAM).pmf(m) * special.comb(m, n)
        term *= _conditional_by_hand(copula, m, d)[0] ** (m - n)
        for claim in record.claims:
            if claim.at_limit:
                term *= 1.0 - _conditional_by_hand(copula, m, l)[0]
            else:
                term *= _conditional_by_hand(copula, m, claim.amount + d)[1]
        total += term
    return math.log(total)


@pytest.mark.parametrize("copula,theta,rotation", [
    ("gaussian", 0.5, 0),
    ("clayton", 2.0, 270),
    ("frank", -4.0, 0),
    ("gumbel", 1.8, 90),
    ("joe", 1.6, 0),
])
def test_likelihoods_match_direct_transcription(copula, theta, rotation):
    model = _model(copula, theta, rotation)
    spec = CopulaSpec(copula, theta, rotation)
    complete = PolicyRecord("c", {}, 3, _claims(80.0, 1250.0, 410.0))
    censored = PolicyRecord("s", {}, 4, _claims(0.0, 300.0, 1900.0, 45.0, at_limit=(2,)),
                            deductible=100.0, limit=2000.0, scheme="censored")
    truncated = PolicyRecord("t", {}, 2, _claims(220.0, 1900.0, at_limit=(1,)),
                             deductible=100.0, limit=2000.0, scheme="truncated")
    assert loglik_complete(model, complete) == pytest.approx(_censored_by_hand(spec, complete), rel=1e-9)
    assert loglik_censored(model, censored) == pytest.approx(_censored_by_hand(spec, censored), rel=1e-9)
    assert loglik_truncated(model, truncated) == pytest.approx(_truncated_by_hand(spec, truncated), rel=1e-9)


def _interior_grid(d: float, l: float, nodes: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights for integrating over ground-up losses in (d, l)."""
    g = _gamma()
    lo, hi = g.cdf(d), g.cdf(l)
    x, w = np.polynomial.legendre.leggauss(nodes)
    y = g.ppf(lo + 0.5 * (hi - lo) * (x + 1.0))
    return y, 0.5 * (hi - lo) * w / g.pdf(y)


def _layout_mass(model, kinds, scheme: str, d: float, l: float) -> float:
    """
    Likelihood summed over one labelled claim layout, each claim below the
    deductible, interior (integrated on the grid) or at the limit.
    """
    y, w = _interior_grid(d, l)
    slots = [range(len(y)) if kind == "interior" else (None,) for kind in kinds]
    records, weights = [], []
    for i, picks in enumerate(itertools.product(*slots)):
        claims, weight = [], 1.0
        for kind, j in zip(kinds, picks):
            if kind == "below":
                claims.append(ClaimRecord(0.0))
            elif kind == "limit":
                claims.append(ClaimRecord(l - d, at_limit=True))
            else:
                claims.append(ClaimRecord(float(y[j] - d)))
                weight *= w[j]
        records.append(PolicyRecord(f"q{i}", {}, len(kinds), tuple(claims), deductible=d, limit=l, scheme=scheme))
        weights.append(weight)
    values = policy_logliks(model, Dataset(records, scheme))
    return float(np.dot(weights, np.exp(values)))


@pytest.mark.parametrize("n", [1, 2])
def test_censored_likelihood_sums_to_count_probability(n):
    d, l = 100.0, 2000.0
    model = _model("frank", 4.0)
    total = sum(_layout_mass(model, kinds, "censored", d, l)
                for kinds in itertools.product(("below", "interior", "limit"), repeat=n))
    assert total == pytest.approx(stats.poisson(LAM).pmf(n), rel=1e-9)


def _payment_count_probability(copula: CopulaSpec, k: int, d: float, m_max: int = 40) -> float:
    """P(k payments) = sum_m f(m) C(m, k) (1 - F(d|m))^k F(d|m)^(m - k)."""
    total = 0.0
    for m in range(k, m_max):
        below = _conditional_by_hand(copula, m, d)[0]
        total += stats.poisson(LAM).pmf(m) * special.comb(m, k) * (1.0 - below) ** k * below ** (m - k)
    return total


def test_truncated_likelihood_matches_payment_count_probabilities():
    d, l = 100.0, 2000.0
    model = _model("frank", 4.0)
    by_hand = [_payment_count_probability(CopulaSpec("frank", 4.0), k, d) for k in range(26)]
    assert math.fsum(by_hand) == pytest.approx(1.0, abs=1e-10)
    for k in range(4):
        mass = sum(_layout_mass(model, kinds, "truncated", d, l)
                   for kinds in itertools.product(("interior", "limit"), repeat=k))
        assert mass == pytest.approx(by_hand[k], abs=1e-10)


@pytest.mark.slow
def test_conditional_identities_over_random_models():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        family, rotation = TABLE_VARIANTS[rng.integers(len(TABLE_VARIANTS))]
        tau = rng.uniform(0.05, 0.6) * (-1.0 if rotation else 1.0)
        copula = param_from_tau(family, tau, rotation, df=rng.uniform(3.0, 20.0) if family == "t" else None)
        lam, mean, shape = rng.uniform(0.3, 4.0), rng.uniform(100.0, 2000.0), rng.uniform(0.7, 4.0)
        spec = CompoundModelSpec("poisson", "gamma", family, rotation)
        values = {
            "frequency.intercept": math.log(lam),
            "severity.intercept": math.log(mean),
            "severity.shape": shape,
            "copula.theta": copula.theta,
        }
        if family == "t":
            values["copula.df"] = copula.df
        model = CompoundModel(spec, spec.default_params(values))
        g = stats.gamma(shape, scale=mean / shape)

        y = g.ppf([0.1, 0.5, 0.9])
        weights = stats.poisson(lam).pmf(np.arange(80))
        mixture = sum(w * cond_cdf(model, {}, n, y) for n, w in enumerate(weights))
        assert mixture == pytest.approx(g.cdf(y), abs=1e-6), copula.label

        for n in (1, 2):
            def density_in_v(v, n=n):
                x = g.ppf(v)
                return float(cond_pdf(model, {}, n, x)) / g.pdf(x)

            mass, _ = integrate.quad(density_in_v, 0.0, 1.0, limit=200)
            assert mass == pytest.approx(1.0, abs=1e-6), copula.label

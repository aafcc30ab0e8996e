# ccr/marginals.py
"""
Marginal regression families for claim counts and claim amounts.

Counts: Poisson, negative binomial and their zero-inflated and zero-one
inflated versions. Inflation weights follow a multinomial logit whose
baseline category is the regular count regime. Amounts: gamma with
(shape, scale) parameterisation and GB2 on the log-location scale.

Every function is vectorised over the covariate rows and the evaluation
points; arguments broadcast with numpy rules.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from ccr.errors import DomainError

logger = logging.getLogger(__name__)

COUNT_KINDS = ("poisson", "negbin", "zipoisson", "zinegbin", "zoipoisson", "zoinegbin")
SEVERITY_KINDS = ("gamma", "gb2")

COUNT_TAIL = 1e-12
COUNT_CAP = 1_000_000


@dataclass(frozen=True)
class LinearPredictor:
    """x'beta under a log link; covariates may hold one row or a design matrix."""

    coefficients: np.ndarray
    covariates: np.ndarray
    link: str = "log"

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 0 or x.shape[-1] != beta.shape[0]:
            raise DomainError(
                f"covariate width {x.shape[-1] if x.ndim else 0} does not match "
                f"{beta.shape[0]} coefficients"
            )
        if self.link != "log":
            raise DomainError(f"unsupported link '{self.link}'")
        object.__setattr__(self, "coefficients", beta)
        object.__setattr__(self, "covariates", x)

    @property
    def eta(self) -> np.ndarray:
        return self.covariates @ self.coefficients

    @property
    def mean(self) -> np.ndarray:
        return np.exp(self.eta)

    @classmethod
    def constant(cls, mean: float) -> "LinearPredictor":
        """Intercept-only predictor with the given mean."""
        return cls(np.array([np.log(mean)]), np.ones(1))


@dataclass(frozen=True)
class CountFamily:
    """
    Count distribution family.

    Args:
        kind: one of COUNT_KINDS
        dispersion: NB size parameter eta (NB variants only)
        zero: multinomial-logit predictor of the extra mass at 0
        one: multinomial-logit predictor of the extra mass at 1 (ZOI only)
        zero_prob, one_prob: inflation probabilities given directly; they
            take precedence over the logit predictors
    """

    kind: str = "poisson"
    dispersion: float | None = None
    zero: LinearPredictor | None = None
    one: LinearPredictor | None = None
    zero_prob: float | np.ndarray | None = None
    one_prob: float | np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in COUNT_KINDS:
            raise DomainError(f"unknown count family '{self.kind}'")
        if self.is_negbin:
            if self.dispersion is None or not np.all(np.asarray(self.dispersion) > 0):
                raise DomainError(f"NB dispersion must be positive, got {self.dispersion}")
        if self.zero_inflated and self.zero is None and self.zero_prob is None:
            raise DomainError(f"{self.kind} needs zero-inflation coefficients or zero_prob")
        if self.one_inflated and self.one is None and self.one_prob is None:
            raise DomainError(f"{self.kind} needs one-inflation coefficients or one_prob")

    @property
    def is_negbin(self) -> bool:
        return self.kind.endswith("negbin")

    @property
    def zero_inflated(self) -> bool:
        return self.kind.startswith("zi") or self.kind.startswith("zoi")

    @property
    def one_inflated(self) -> bool:
        return self.kind.startswith("zoi")

    def inflation_logweights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """log p0, log p1 and log(1 - p0 - p1) of the mixture."""
        with np.errstate(divide="ignore"):
            if not self.zero_inflated:
                return np.array(-np.inf), np.array(-np.inf), np.array(0.0)
            if self.zero_prob is not None or self.one_prob is not None:
                p0 = np.asarray(self.zero_prob if self.zero_prob is not None else 0.0, dtype=float)
                p1 = np.asarray(self.one_prob if self.one_prob is not None else 0.0, dtype=float)
                if np.any(p0 < 0) or np.any(p1 < 0) or np.any(p0 + p1 > 1 + 1e-15):
                    raise DomainError("inflation probabilities must be nonnegative and sum to at most 1")
                return np.log(p0), np.log(p1), np.log(np.clip(1.0 - p0 - p1, 0.0, 1.0))
            eta0 = self.zero.eta
            eta1 = self.one.eta if self.one_inflated else np.full_like(eta0, -np.inf)
            eta0, eta1 = np.broadcast_arrays(eta0, eta1)
            norm = special.logsumexp(np.stack([np.zeros_like(eta0), eta0, eta1]), axis=0)
            return eta0 - norm, eta1 - norm, -norm


@dataclass(frozen=True)
class SeverityFamily:
    """
    Claim amount family.

    Gamma uses shape alpha with scale mean/alpha. GB2 uses shape1, shape2 and
    sigma with log-location x'beta, so LinearPredictor.mean is exp(location).
    """

    kind: str = "gamma"
    shape: float | None = None
    shape1: float | None = None
    shape2: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if self.kind not in SEVERITY_KINDS:
            raise DomainError(f"unknown severity family '{self.kind}'")
        needed = {"gamma": ("shape",), "gb2": ("shape1", "shape2", "sigma")}[self.kind]
        for name in needed:
            value = getattr(self, name)
            if value is None or not value > 0:
                raise DomainError(f"{self.kind} parameter {name} must be positive, got {value}")


# --------------------------------------------------------------------------
# counts
# --------------------------------------------------------------------------

def _base_dist(family: CountFamily, mean_params: LinearPredictor):
    mu = mean_params.mean
    if family.is_negbin:
        eta = float(family.dispersion)
        return stats.nbinom(eta, eta / (eta + mu))
    return stats.poisson(mu)


def count_logpmf(family: CountFamily, mean_params: LinearPredictor, n) -> np.ndarray:
    n = np.asarray(n)
    if np.any(n < 0):
        raise DomainError("count must be nonnegative")
    log_p0, log_p1, log_base = family.inflation_logweights()
    with np.errstate(divide="ignore"):
        lp = log_base + _base_dist(family, mean_params).logpmf(n)
    if family.zero_inflated:
        lp = np.where(n == 0, np.logaddexp(lp, log_p0), lp)
    if family.one_inflated:
        lp = np.where(n == 1, np.logaddexp(lp, log_p1), lp)
    return lp


def count_pmf(family: CountFamily, mean_params: LinearPredictor, n) -> np.ndarray:
    return np.exp(count_logpmf(family, mean_params, n))


def count_cdf(family: CountFamily, mean_params: LinearPredictor, n) -> np.ndarray:
    """F_N(n) with F_N(-1) = 0."""
    n = np.asarray(n)
    p0, p1, base = (np.exp(w) for w in family.inflation_logweights())
    g = _base_dist(family, mean_params).cdf(n)
    cdf = base * g
    if family.zero_inflated:
        cdf = cdf + p0 * (n >= 0)
    if family.one_inflated:
        cdf = cdf + p1 * (n >= 1)
    return np.clip(np.where(n < 0, 0.0, cdf), 0.0, 1.0)


def count_upper_bound(family: CountFamily, mean_params: LinearPredictor, tail: float = COUNT_TAIL) -> np.ndarray:
    """Smallest n with 1 - F_N(n) below `tail`, capped at COUNT_CAP."""
    bound = _base_dist(family, mean_params).isf(tail)
    bound = np.where(np.isfinite(bound), bound, COUNT_CAP)
    if family.one_inflated:
        bound = np.maximum(bound, 1)
    return np.minimum(bound, COUNT_CAP).astype(np.int64)


def count_moments(family: CountFamily, mean_params: LinearPredictor) -> tuple[np.ndarray, np.ndarray]:
    mu = mean_params.mean
    base_var = mu + mu**2 / float(family.dispersion) if family.is_negbin else mu
    p0, p1, base = (np.exp(w) for w in family.inflation_logweights())
    one = p1 if family.one_inflated else 0.0
    mean = one + base * mu
    second = one + base * (base_var + mu**2)
    return mean, second - mean**2


def count_sample(family: CountFamily, mean_params: LinearPredictor, rng: np.random.Generator,
                 size=None, positive: bool = False) -> np.ndarray:
    """
    Draw counts by inverting F_N. With positive=True the draw is conditional
    on N > 0.
    """
    shape = size if size is not None else np.shape(mean_params.mean)
    lower = count_cdf(family, mean_params, 0) if positive else 0.0
    u = lower + (1.0 - lower) * rng.random(shape)
    base_dist = _base_dist(family, mean_params)
    if not family.zero_inflated:
        n = base_dist.ppf(u)
    else:
        p0, p1, base = (np.exp(w) for w in family.inflation_logweights())
        f0 = count_cdf(family, mean_params, 0)
        f1 = count_cdf(family, mean_params, 1)
        extra = p0 + (p1 if family.one_inflated else 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.clip((u - extra) / base, 0.0, 1.0)
        n = np.where(u <= f0, 0, np.where(u <= f1, 1, np.maximum(base_dist.ppf(q), 2)))
    return np.asarray(n, dtype=np.int64)


# --------------------------------------------------------------------------
# severities
# --------------------------------------------------------------------------

def _check_positive(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError("severity must be positive")
    return y


def _check_nonnegative(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y >= 0)):
        raise DomainError("severity must be nonnegative")
    return y


def _gamma(family: SeverityFamily, mean_params: LinearPredictor):
    alpha = float(family.shape)
    return stats.gamma(alpha, scale=mean_params.mean / alpha)


def _gb2_w(family: SeverityFamily, mean_params: LinearPredictor, y):
    with np.errstate(divide="ignore"):
        return (np.log(y) - mean_params.eta) / family.sigma


def severity_logpdf(family: SeverityFamily, mean_params: LinearPredictor, y) -> np.ndarray:
    y = _check_positive(y)
    if family.kind == "gamma":
        return _gamma(family, mean_params).logpdf(y)
    a, b = family.shape1, family.shape2
    w = _gb2_w(family, mean_params, y)
    return a * w - np.log(y) - np.log(family.sigma) - special.betaln(a, b) - (a + b) * np.logaddexp(0.0, w)


def severity_pdf(family: SeverityFamily, mean_params: LinearPredictor, y) -> np.ndarray:
    return np.exp(severity_logpdf(family, mean_params, y))


def severity_cdf(family: SeverityFamily, mean_params: LinearPredictor, y) -> np.ndarray:
    """F_Y(y); y = 0 gives 0 and y = inf gives 1."""
    y = _check_nonnegative(y)
    if family.kind == "gamma":
        return _gamma(family, mean_params).cdf(y)
    w = _gb2_w(family, mean_params, y)
    return special.betainc(family.shape1, family.shape2, special.expit(w))


def severity_sf(family: SeverityFamily, mean_params: LinearPredictor, y) -> np.ndarray:
    y = _check_nonnegative(y)
    if family.kind == "gamma":
        return _gamma(family, mean_params).sf(y)
    w = _gb2_w(family, mean_params, y)
    return special.betainc(family.shape2, family.shape1, special.expit(-w))


def severity_quantile(family: SeverityFamily, mean_params: LinearPredictor, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("quantile level must lie in (0, 1)")
    if family.kind == "gamma":
        return _gamma(family, mean_params).ppf(p)
    w = special.logit(special.betaincinv(family.shape1, family.shape2, p))
    return np.exp(mean_params.eta + family.sigma * w)


def severity_moments(family: SeverityFamily, mean_params: LinearPredictor) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance; +inf where the GB2 moment does not exist."""
    if family.kind == "gamma":
        mean = mean_params.mean
        return mean, mean**2 / family.shape
    a, b, s = family.shape1, family.shape2, family.sigma
    loc = mean_params.eta

    def raw(k):
        if b <= k * s:
            return np.full_like(np.asarray(loc, dtype=float), np.inf)
        return np.exp(k * loc + special.betaln(a + k * s, b - k * s) - special.betaln(a, b))

    m1, m2 = raw(1), raw(2)
    with np.errstate(invalid="ignore"):
        var = np.where(np.isfinite(m2), m2 - m1**2, np.inf)
    return m1, var


def severity_sample(family: SeverityFamily, mean_params: LinearPredictor, rng: np.random.Generator,
                    size=None) -> np.ndarray:
    shape = size if size is not None else np.shape(mean_params.mean)
    u = np.clip(rng.random(shape), 1e-16, 1 - 1e-16)
    return severity_quantile(family, mean_params, u)


def tweedie_parameters(mu: float, p: float, phi: float) -> tuple[float, float, float]:
    """Poisson rate and gamma (shape, scale) of the Tweedie law with power p in (1, 2)."""
    if not 1.0 < p < 2.0 or mu <= 0 or phi <= 0:
        raise DomainError("Tweedie needs mu > 0, phi > 0 and 1 < p < 2")
    lam = mu ** (2 - p) / (phi * (2 - p))
    alpha = (2 - p) / (p - 1)
    gamma = phi * (p - 1) * mu ** (p - 1)
    return lam, alpha, gamma


def tweedie_from_compound(lam: float, alpha: float, gamma: float) -> tuple[float, float, float]:
    """Inverse of tweedie_parameters."""
    if lam <= 0 or alpha <= 0 or gamma <= 0:
        raise DomainError("compound Poisson-gamma parameters must be positive")
    mu = lam * alpha * gamma
    p = (alpha + 2) / (alpha + 1)
    phi = mu ** (2 - p) / (lam * (2 - p))
    return mu, p, phi

# ccr/compound.py
"""
Copula-linked joint law of (N, Y_1..Y_N) and per-policy log-likelihoods.

With u = F_N and v = F_Y the conditional severity law given N = n is

    F_{Y|N}(y|n) = [C(F_N(n), F_Y(y)) - C(F_N(n-1), F_Y(y))] / f_N(n)
    f_{Y|N}(y|n) = f_Y(y) [h(F_N(n), F_Y(y)) - h(F_N(n-1), F_Y(y))] / f_N(n)

using F_N(-1) = 0. Claims are conditionally i.i.d. given N.

Observation schemes:
    complete   ground-up amounts
    censored   per-loss: every accident reported, amount max(0, min(y, l) - d),
               below-deductible claims carried as zero amounts
    truncated  per-payment: only y > d observed, payments min(y, l) - d
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import special

from ccr.copulas import ARCHIMEDEAN, FAMILIES, CopulaSpec, copula_cdf, copula_hfunc
from ccr.errors import DataValidationError, DegenerateConditionalError, DomainError, NumericError
from ccr.marginals import (
    COUNT_KINDS,
    SEVERITY_KINDS,
    CountFamily,
    LinearPredictor,
    SeverityFamily,
    count_cdf,
    count_logpmf,
    count_upper_bound,
    severity_cdf,
    severity_logpdf,
    severity_pdf,
    severity_sf,
)
from ccr.params import ParamEntry, ParamVector

logger = logging.getLogger(__name__)

SCHEMES = ("complete", "censored", "truncated")
SERIES_CAP = 200
SERIES_TOL = 1e-12
AMOUNT_TOL = 1e-9


# --------------------------------------------------------------------------
# records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClaimRecord:
    """One observed claim: amount after coverage modification and claim-level covariates."""

    amount: float
    at_limit: bool = False
    covariates: Mapping[str, float] = field(default_factory=dict)

    @property
    def below_deductible(self) -> bool:
        return self.amount == 0.0 and not self.at_limit


@dataclass(frozen=True)
class PolicyRecord:
    """One policy-year."""

    policy_id: str
    covariates: Mapping[str, float]
    n: int
    claims: tuple[ClaimRecord, ...] = ()
    deductible: float = 0.0
    limit: float = math.inf
    scheme: str = "complete"
    year: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "claims", tuple(self.claims))
        object.__setattr__(self, "policy_id", str(self.policy_id))
        pid = self.policy_id
        if self.scheme not in SCHEMES:
            raise DataValidationError(f"unknown observation scheme '{self.scheme}'", [pid])
        if self.n < 0:
            raise DataValidationError(f"policy {pid}: negative claim count", [pid])
        if len(self.claims) != self.n:
            raise DataValidationError(
                f"policy {pid}: n_claims={self.n} but {len(self.claims)} claim rows", [pid]
            )
        if not self.deductible >= 0:
            raise DataValidationError(f"policy {pid}: deductible must be nonnegative", [pid])
        if not self.limit > self.deductible:
            raise DataValidationError(f"policy {pid}: limit must exceed the deductible", [pid])
        cap = self.limit - self.deductible
        for claim in self.claims:
            if not claim.amount >= 0:
                raise DataValidationError(f"policy {pid}: negative claim amount {claim.amount}", [pid])
            if self.scheme == "complete":
                if claim.at_limit or not claim.amount > 0:
                    raise DataValidationError(
                        f"policy {pid}: complete data needs positive, unlimited amounts", [pid]
                    )
                continue
            if claim.at_limit:
                if not math.isfinite(cap) or abs(claim.amount - cap) > AMOUNT_TOL * max(1.0, cap):
                    raise DataValidationError(
                        f"policy {pid}: at-limit claim must equal limit - deductible = {cap}", [pid]
                    )
            elif claim.amount >= cap - AMOUNT_TOL * max(1.0, cap):
                raise DataValidationError(
                    f"policy {pid}: claim amount {claim.amount} reaches l - d without the at-limit flag", [pid]
                )
            if self.scheme == "truncated" and claim.amount == 0.0:
                raise DataValidationError(
                    f"policy {pid}: per-payment data cannot hold below-deductible claims", [pid]
                )


def _require_integral(frame: pd.DataFrame, column: str) -> None:
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(values) | (values != np.round(values))
    if bad.any():
        ids = sorted({str(p) for p in frame.loc[bad, "policy_id"]})
        raise DataValidationError(f"column {column} must hold whole numbers; offending policies {ids}", ids)


class Dataset:
    """Ordered policy records with cached design matrices."""

    def __init__(self, records: Sequence[PolicyRecord], scheme: str | None = None):
        records = list(records)
        if not records:
            raise DataValidationError("dataset is empty")
        scheme = scheme or records[0].scheme
        bad = [r.policy_id for r in records if r.scheme != scheme]
        if bad:
            raise DataValidationError(f"records mix observation schemes (expected {scheme})", bad)
        self.records = records
        self.scheme = scheme
        self.policy_ids = np.array([r.policy_id for r in records], dtype=object)
        self.n = np.array([r.n for r in records], dtype=np.int64)
        self.deductible = np.array([r.deductible for r in records], dtype=float)
        self.limit = np.array([r.limit for r in records], dtype=float)
        self.years = np.array([r.year if r.year is not None else -1 for r in records], dtype=np.int64)
        self.policy_frame = pd.DataFrame([dict(r.covariates) for r in records])

        claim_policy, amounts, at_limit, claim_rows = [], [], [], []
        for i, r in enumerate(records):
            for c in r.claims:
                claim_policy.append(i)
                amounts.append(c.amount)
                at_limit.append(c.at_limit)
                claim_rows.append({**dict(r.covariates), **dict(c.covariates)})
        self.claim_policy = np.array(claim_policy, dtype=np.int64)
        self.claim_amount = np.array(amounts, dtype=float)
        self.claim_at_limit = np.array(at_limit, dtype=bool)
        self.claim_below = (self.claim_amount == 0.0) & ~self.claim_at_limit
        self.claim_frame = pd.DataFrame(claim_rows, columns=self._claim_columns(records))
        self._designs: dict = {}

    @staticmethod
    def _claim_columns(records) -> list[str]:
        cols: dict[str, None] = {}
        for r in records:
            cols.update(dict.fromkeys(r.covariates))
            for c in r.claims:
                cols.update(dict.fromkeys(c.covariates))
        return list(cols)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_claims(self) -> int:
        return int(self.claim_policy.size)

    @property
    def policy_columns(self) -> list[str]:
        return list(self.policy_frame.columns)

    @property
    def claim_columns(self) -> list[str]:
        return list(self.claim_frame.columns)

    def design(self, names: Sequence[str], level: str = "policy") -> np.ndarray:
        """Intercept plus the named covariates, one row per policy or per claim."""
        key = (tuple(names), level)
        if key not in self._designs:
            frame = self.policy_frame if level == "policy" else self.claim_frame
            missing = [n for n in names if n not in frame.columns]
            if missing:
                raise DataValidationError(
                    f"covariates {missing} are not available at {level} level", missing=missing
                )
            rows = len(self.records) if level == "policy" else self.n_claims
            x = np.ones((rows, len(names) + 1))
            if names:
                x[:, 1:] = frame[list(names)].to_numpy(dtype=float)
            self._designs[key] = x
        return self._designs[key]

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.scheme.encode())
        policies = self.policy_frame.assign(
            policy_id=self.policy_ids, n=self.n, d=self.deductible, l=self.limit, year=self.years
        )
        digest.update(policies.to_csv(index=False, float_format="%.17g").encode())
        claims = self.claim_frame.assign(
            policy=self.claim_policy, amount=self.claim_amount, at_limit=self.claim_at_limit
        )
        digest.update(claims.to_csv(index=False, float_format="%.17g").encode())
        return digest.hexdigest()

    @classmethod
    def from_frames(cls, policies: pd.DataFrame, claims: pd.DataFrame, scheme: str = "complete",
                    deductible: float = 0.0, limit: float = math.inf) -> "Dataset":
        """
        Join a policy table and a claims table into validated records.

        Policy columns: policy_id, n_claims, optional year, deductible, limit;
        every other column is a policy covariate. Claim columns: policy_id,
        amount, optional year and at_limit (0/1); every other column is a
        claim covariate. Claims join on (policy_id, year) when both tables
        carry a year. `deductible` and `limit` fill in for missing columns.
        """
        for name, frame, needed in (("policy", policies, ("policy_id", "n_claims")),
                                    ("claims", claims, ("policy_id", "amount"))):
            missing = [c for c in needed if c not in frame.columns]
            if missing:
                raise DataValidationError(f"{name} table lacks columns {missing}")

        policies = policies.copy()
        claims = claims.copy()
        _require_integral(policies, "n_claims")
        for frame in (policies, claims):
            if "year" in frame.columns:
                _require_integral(frame, "year")
        policies["policy_id"] = policies["policy_id"].astype(str)
        claims["policy_id"] = claims["policy_id"].astype(str)
        by_year = "year" in policies.columns and "year" in claims.columns

        def key_of(frame):
            if by_year:
                return list(zip(frame["policy_id"], frame["year"].astype(int)))
            return list(frame["policy_id"])

        policy_keys = key_of(policies)
        duplicated = pd.Series(policy_keys).duplicated()
        if duplicated.any():
            raise DataValidationError(
                "duplicate policy rows", [str(k) for k in pd.Series(policy_keys)[duplicated]]
            )
        claims["_key"] = key_of(claims)
        known = set(policy_keys)
        orphans = sorted({str(k[0] if by_year else k) for k in claims["_key"] if k not in known})
        if orphans:
            raise DataValidationError(f"claims reference unknown policies {orphans}", orphans)

        claim_covs = [c for c in claims.columns if c not in ("policy_id", "year", "amount", "at_limit", "_key")]
        policy_covs = [c for c in policies.columns
                       if c not in ("policy_id", "year", "n_claims", "deductible", "limit")]
        if "at_limit" not in claims.columns:
            claims["at_limit"] = 0
        grouped = {key: rows for key, rows in claims.groupby("_key", sort=False)}

        records = []
        for key, (_, row) in zip(policy_keys, policies.iterrows()):
            rows = grouped.get(key)
            claim_records = ()
            if rows is not None:
                claim_records = tuple(
                    ClaimRecord(
                        amount=float(c["amount"]),
                        at_limit=bool(int(c["at_limit"])),
                        covariates={k: float(c[k]) for k in claim_covs},
                    )
                    for _, c in rows.iterrows()
                )
            row_limit = row.get("limit", limit)
            records.append(PolicyRecord(
                policy_id=row["policy_id"],
                covariates={k: float(row[k]) for k in policy_covs},
                n=int(row["n_claims"]),
                claims=claim_records,
                deductible=float(row.get("deductible", deductible)),
                limit=math.inf if pd.isna(row_limit) else float(row_limit),
                scheme=scheme,
                year=int(row["year"]) if "year" in policies.columns else None,
            ))
        logger.debug(f"built {len(records)} policy records with {len(claims)} claims")
        return cls(records, scheme)

    def subset(self, index) -> "Dataset":
        return Dataset([self.records[i] for i in np.atleast_1d(index)], self.scheme)

    def split_by_year(self, holdout_year: int) -> tuple["Dataset", "Dataset"]:
        train = np.flatnonzero(self.years != holdout_year)
        test = np.flatnonzero(self.years == holdout_year)
        if train.size == 0 or test.size == 0:
            raise DataValidationError(f"year {holdout_year} does not split the dataset")
        return self.subset(train), self.subset(test)

    def to_frames(self) -> tuple[pd.DataFrame, pd.DataFrame]:
        """Policy and claim tables in the CSV layout read by the CLI."""
        policies = pd.DataFrame({
            "policy_id": self.policy_ids,
            "year": self.years,
            "n_claims": self.n,
            "deductible": self.deductible,
            "limit": self.limit,
        })
        policies = pd.concat([policies, self.policy_frame.reset_index(drop=True)], axis=1)
        claim_only = [
            c for c in self.claim_frame.columns if c not in self.policy_frame.columns
        ]
        claims = pd.DataFrame({
            "policy_id": self.policy_ids[self.claim_policy] if self.n_claims else [],
            "year": self.years[self.claim_policy] if self.n_claims else [],
            "amount": self.claim_amount,
            "at_limit": self.claim_at_limit.astype(int),
        })
        claims = pd.concat([claims, self.claim_frame[claim_only].reset_index(drop=True)], axis=1)
        return policies, claims


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------

_COPULA_THETA = {
    "gaussian": (0.0, "atanh"),
    "t": (0.0, "atanh"),
    "clayton": (1.0, "log"),
    "gumbel": (1.5, "log1m"),
    "joe": (1.5, "log1m"),
    "frank": (1.0, "identity"),
}


@dataclass(frozen=True)
class CompoundModelSpec:
    """Families, copula and covariate lists of a frequency-severity model."""

    frequency: str = "poisson"
    severity: str = "gamma"
    copula: str = "gaussian"
    rotation: int = 0
    frequency_covariates: tuple[str, ...] = ()
    severity_covariates: tuple[str, ...] = ()
    zero_covariates: tuple[str, ...] = ()
    one_covariates: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("frequency_covariates", "severity_covariates", "zero_covariates", "one_covariates"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "copula", self.copula.lower())
        if self.frequency not in COUNT_KINDS:
            raise DomainError(f"unknown count family '{self.frequency}'")
        if self.severity not in SEVERITY_KINDS:
            raise DomainError(f"unknown severity family '{self.severity}'")
        if self.copula not in FAMILIES:
            raise DomainError(f"unknown copula family '{self.copula}'")
        if self.rotation and self.copula not in ARCHIMEDEAN:
            raise DomainError(f"{self.copula} copula does not take a rotation")

    @property
    def label(self) -> str:
        return CopulaSpec(self.copula, **self._neutral_copula_args()).label

    def _neutral_copula_args(self) -> dict:
        theta = _COPULA_THETA.get(self.copula, (0.0, None))[0]
        return {"theta": theta, "rotation": self.rotation, "df": 10.0 if self.copula == "t" else None}

    def with_copula(self, family: str, rotation: int = 0) -> "CompoundModelSpec":
        return replace(self, copula=family, rotation=rotation)

    @property
    def zero_inflated(self) -> bool:
        return self.frequency.startswith("zi") or self.frequency.startswith("zoi")

    @property
    def one_inflated(self) -> bool:
        return self.frequency.startswith("zoi")

    def layout(self) -> list[tuple[str, str, float, str]]:
        """(block, name, neutral start value, transform) per free parameter."""
        rows = [("frequency", "intercept", 0.0, "identity")]
        rows += [("frequency", c, 0.0, "identity") for c in self.frequency_covariates]
        if self.frequency.endswith("negbin"):
            rows.append(("frequency", "dispersion", 1.0, "log"))
        if self.zero_inflated:
            rows.append(("frequency", "zero.intercept", -2.0, "identity"))
            rows += [("frequency", f"zero.{c}", 0.0, "identity") for c in self.zero_covariates]
        if self.one_inflated:
            rows.append(("frequency", "one.intercept", -2.0, "identity"))
            rows += [("frequency", f"one.{c}", 0.0, "identity") for c in self.one_covariates]
        rows.append(("severity", "intercept", 0.0, "identity"))
        rows += [("severity", c, 0.0, "identity") for c in self.severity_covariates]
        if self.severity == "gamma":
            rows.append(("severity", "shape", 1.0, "log"))
        else:
            rows += [("severity", p, 1.0, "log") for p in ("shape1", "shape2", "sigma")]
        if self.copula != "independence":
            value, tag = _COPULA_THETA[self.copula]
            rows.append(("copula", "theta", value, tag))
            if self.copula == "t":
                rows.append(("copula", "df", 10.0, "log"))
        return rows

    def default_params(self, values: Mapping[str, float] | None = None) -> ParamVector:
        vector = ParamVector(ParamEntry(b, n, v, t) for b, n, v, t in self.layout())
        return vector.replace(values) if values else vector

    def covariates(self) -> dict[str, tuple[str, ...]]:
        return {
            "frequency": self.frequency_covariates,
            "severity": self.severity_covariates,
            "zero": self.zero_covariates if self.zero_inflated else (),
            "one": self.one_covariates if self.one_inflated else (),
        }

    def check_columns(self, policy_columns: Iterable[str], claim_columns: Iterable[str]) -> None:
        policy_columns, claim_columns = set(policy_columns), set(claim_columns)
        missing = [c for c in (*self.frequency_covariates, *self.covariates()["zero"], *self.covariates()["one"])
                   if c not in policy_columns]
        missing += [c for c in self.severity_covariates if c not in policy_columns | claim_columns]
        if missing:
            raise DataValidationError(f"model references unknown covariates {sorted(set(missing))}")


@dataclass(frozen=True)
class CompoundModel:
    """A CompoundModelSpec with parameter values."""

    spec: CompoundModelSpec
    params: ParamVector

    def __post_init__(self):
        expected = [f"{b}.{n}" for b, n, _, _ in self.spec.layout()]
        if self.params.keys != expected:
            raise DomainError(f"parameter vector {self.params.keys} does not match layout {expected}")

    def count_law(self, x_freq, x_zero=None, x_one=None) -> tuple[CountFamily, LinearPredictor]:
        spec, p = self.spec, self.params
        beta = p.array("frequency", ("intercept", *spec.frequency_covariates))
        zero = one = None
        if spec.zero_inflated:
            names = ("zero.intercept", *(f"zero.{c}" for c in spec.zero_covariates))
            zero = LinearPredictor(p.array("frequency", names), x_zero)
        if spec.one_inflated:
            names = ("one.intercept", *(f"one.{c}" for c in spec.one_covariates))
            one = LinearPredictor(p.array("frequency", names), x_one)
        family = CountFamily(spec.frequency, dispersion=p.get("frequency.dispersion"), zero=zero, one=one)
        return family, LinearPredictor(beta, x_freq)

    def severity_law(self, x_sev) -> tuple[SeverityFamily, LinearPredictor]:
        spec, p = self.spec, self.params
        beta = p.array("severity", ("intercept", *spec.severity_covariates))
        if spec.severity == "gamma":
            family = SeverityFamily("gamma", shape=p["severity.shape"])
        else:
            family = SeverityFamily(
                "gb2", shape1=p["severity.shape1"], shape2=p["severity.shape2"], sigma=p["severity.sigma"]
            )
        return family, LinearPredictor(beta, x_sev)

    def copula(self) -> CopulaSpec:
        if self.spec.copula == "independence":
            return CopulaSpec("independence")
        return CopulaSpec(
            self.spec.copula, self.params["copula.theta"], self.spec.rotation, df=self.params.get("copula.df")
        )

    def with_params(self, params: ParamVector) -> "CompoundModel":
        return CompoundModel(self.spec, params)


def design_row(names: Sequence[str], x: Mapping[str, float]) -> np.ndarray:
    missing = [n for n in names if n not in x]
    if missing:
        raise DataValidationError(f"covariates {missing} missing from the supplied values")
    return np.array([1.0, *(float(x[n]) for n in names)])


def count_law_for(model: CompoundModel, x: Mapping[str, float]):
    cov = model.spec.covariates()
    return model.count_law(
        design_row(cov["frequency"], x),
        design_row(cov["zero"], x) if model.spec.zero_inflated else None,
        design_row(cov["one"], x) if model.spec.one_inflated else None,
    )


def count_designs(model: CompoundModel, data: Dataset):
    cov = model.spec.covariates()
    return (
        data.design(cov["frequency"]),
        data.design(cov["zero"]) if model.spec.zero_inflated else None,
        data.design(cov["one"]) if model.spec.one_inflated else None,
    )


# --------------------------------------------------------------------------
# conditional law on arrays
# --------------------------------------------------------------------------

def _log(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(np.clip(x, 0.0, None))


def log_cond_pdf_terms(cop: CopulaSpec, f_hi, f_lo, log_fn, log_fy, fy):
    """log f_{Y|N} from count CDF bounds f_lo = F_N(n-1), f_hi = F_N(n)."""
    if cop.family == "independence":
        return np.broadcast_to(log_fy, np.broadcast(f_hi, log_fy).shape).astype(float)
    diff = copula_hfunc(cop, f_hi, fy) - copula_hfunc(cop, f_lo, fy)
    return log_fy + _log(diff) - log_fn


def log_cond_cdf_terms(cop: CopulaSpec, f_hi, f_lo, log_fn, fy):
    if cop.family == "independence":
        return np.broadcast_to(_log(fy), np.broadcast(f_hi, fy).shape).astype(float)
    diff = copula_cdf(cop, f_hi, fy) - copula_cdf(cop, f_lo, fy)
    return _log(diff) - log_fn


def log_cond_sf_terms(cop: CopulaSpec, f_hi, f_lo, log_fn, fy, sy):
    if cop.family == "independence":
        return np.broadcast_to(_log(sy), np.broadcast(f_hi, sy).shape).astype(float)
    diff = (f_hi - copula_cdf(cop, f_hi, fy)) - (f_lo - copula_cdf(cop, f_lo, fy))
    return _log(diff) - log_fn


# --------------------------------------------------------------------------
# conditional law at one covariate point
# --------------------------------------------------------------------------

def _conditional_inputs(model: CompoundModel, x: Mapping[str, float], n: int):
    if n < 0:
        raise DomainError("claim count must be nonnegative")
    family, mp = count_law_for(model, x)
    log_fn = float(count_logpmf(family, mp, n))
    if not np.isfinite(log_fn):
        raise DegenerateConditionalError(f"f_N({n}) = 0; the conditional law is undefined", n=n)
    f_hi = float(count_cdf(family, mp, n))
    f_lo = float(count_cdf(family, mp, n - 1))
    sev, smp = model.severity_law(design_row(model.spec.severity_covariates, x))
    return log_fn, f_hi, f_lo, sev, smp


def cond_cdf(model: CompoundModel, x: Mapping[str, float], n: int, y) -> np.ndarray:
    """F_{Y|N}(y|n)."""
    log_fn, f_hi, f_lo, sev, smp = _conditional_inputs(model, x, n)
    fy = severity_cdf(sev, smp, y)
    cop = model.copula()
    if cop.family == "independence":
        return fy
    diff = copula_cdf(cop, f_hi, fy) - copula_cdf(cop, f_lo, fy)
    return np.clip(diff / math.exp(log_fn), 0.0, 1.0)


def cond_pdf(model: CompoundModel, x: Mapping[str, float], n: int, y) -> np.ndarray:
    """f_{Y|N}(y|n)."""
    log_fn, f_hi, f_lo, sev, smp = _conditional_inputs(model, x, n)
    fy = severity_cdf(sev, smp, y)
    return np.exp(log_cond_pdf_terms(model.copula(), f_hi, f_lo, log_fn, severity_logpdf(sev, smp, y), fy))


def cond_pdf_given_occurrence(model: CompoundModel, x: Mapping[str, float], y) -> np.ndarray:
    """Severity density given N > 0: f_Y(y) [1 - h(F_N(0), F_Y(y))] / (1 - F_N(0))."""
    family, mp = count_law_for(model, x)
    f0 = float(count_cdf(family, mp, 0))
    if f0 >= 1.0:
        raise DegenerateConditionalError("P(N > 0) = 0")
    sev, smp = model.severity_law(design_row(model.spec.severity_covariates, x))
    fy = severity_cdf(sev, smp, y)
    weight = 1.0 - copula_hfunc(model.copula(), f0, fy)
    return severity_pdf(sev, smp, y) * weight / (1.0 - f0)


# --------------------------------------------------------------------------
# log-likelihoods
# --------------------------------------------------------------------------

def policy_logliks(model: CompoundModel, data: Dataset) -> np.ndarray:
    """Per-policy log-likelihood under the dataset's observation scheme."""
    if data.scheme == "truncated":
        return _truncated_logliks(model, data)
    return _censored_logliks(model, data)


def portfolio_loglik(model: CompoundModel, data: Dataset) -> float:
    values = policy_logliks(model, data)
    if not np.all(np.isfinite(values)):
        return -math.inf
    return math.fsum(values.tolist())


def _censored_logliks(model: CompoundModel, data: Dataset) -> np.ndarray:
    # the complete scheme is the d = 0, l = inf special case
    family, mp = model.count_law(*count_designs(model, data))
    n = data.n
    log_fn = count_logpmf(family, mp, n)
    ll = log_fn.astype(float).copy()
    if data.n_claims == 0:
        return ll

    cp = data.claim_policy
    f_hi = count_cdf(family, mp, n)[cp]
    f_lo = count_cdf(family, mp, n - 1)[cp]
    lfn = log_fn[cp]
    d, lim = data.deductible[cp], data.limit[cp]
    sev, smp = model.severity_law(data.design(model.spec.severity_covariates, "claim"))
    cop = model.copula()

    below, at_limit = data.claim_below, data.claim_at_limit
    interior = ~below & ~at_limit
    ground = np.where(interior, data.claim_amount + d, 1.0)
    terms = np.zeros(data.n_claims)
    terms[interior] = log_cond_pdf_terms(
        cop, f_hi, f_lo, lfn, severity_logpdf(sev, smp, ground), severity_cdf(sev, smp, ground)
    )[interior]
    if below.any():
        fd = severity_cdf(sev, smp, d)
        terms[below] = log_cond_cdf_terms(cop, f_hi, f_lo, lfn, fd)[below]
    if at_limit.any():
        finite_lim = np.where(np.isfinite(lim), lim, 1.0)
        terms[at_limit] = log_cond_sf_terms(
            cop, f_hi, f_lo, lfn, severity_cdf(sev, smp, finite_lim), severity_sf(sev, smp, finite_lim)
        )[at_limit]
    np.add.at(ll, cp, terms)
    return ll


def _truncated_logliks(model: CompoundModel, data: Dataset) -> np.ndarray:
    """
    log sum_{m>=n} f_N(m) C(m, n) prod_j f_{Y|N}(y_j + d | m)
        [1 - F_{Y|N}(l | m)]^{n-k} F_{Y|N}(d | m)^{m-n}
    summed in log space over m = n .. n + J.
    """
    x_freq, x_zero, x_one = count_designs(model, data)
    family_flat, mp_flat = model.count_law(x_freq, x_zero, x_one)
    n = data.n
    upper = count_upper_bound(family_flat, mp_flat, tail=SERIES_TOL * 1e-2)
    span = int(np.clip(np.max(upper - n), 1, SERIES_CAP))

    expand = (lambda x: None if x is None else x[:, None, :])
    family, mp = model.count_law(expand(x_freq), expand(x_zero), expand(x_one))
    cop = model.copula()
    sev_pol, smp_pol = model.severity_law(data.design(model.spec.severity_covariates, "policy"))
    fd_pol = severity_cdf(sev_pol, smp_pol, data.deductible)

    cp = data.claim_policy
    if data.n_claims:
        sev, smp = model.severity_law(data.design(model.spec.severity_covariates, "claim"))
        d_c, lim_c = data.deductible[cp], data.limit[cp]
        at_limit = data.claim_at_limit
        ground = np.where(at_limit, 1.0, data.claim_amount + d_c)
        log_fy = severity_logpdf(sev, smp, ground)[:, None]
        fy = severity_cdf(sev, smp, ground)[:, None]
        finite_lim = np.where(np.isfinite(lim_c), lim_c, 1.0)
        fl = severity_cdf(sev, smp, finite_lim)[:, None]
        sl = severity_sf(sev, smp, finite_lim)[:, None]

    while True:
        offsets = np.arange(span + 1)
        m = n[:, None] + offsets[None, :]
        log_fm = count_logpmf(family, mp, m)
        f_hi = count_cdf(family, mp, m)
        f_lo = count_cdf(family, mp, m - 1)
        log_binom = special.gammaln(m + 1) - special.gammaln(n + 1)[:, None] - special.gammaln(m - n[:, None] + 1)
        log_cd = log_cond_cdf_terms(cop, f_hi, f_lo, log_fm, fd_pol[:, None])
        with np.errstate(invalid="ignore"):
            missing = np.where(offsets[None, :] == 0, 0.0, (m - n[:, None]) * log_cd)
        log_terms = log_fm + log_binom + missing

        if data.n_claims:
            claim_terms = np.where(
                at_limit[:, None],
                log_cond_sf_terms(cop, f_hi[cp], f_lo[cp], log_fm[cp], fl, sl),
                log_cond_pdf_terms(cop, f_hi[cp], f_lo[cp], log_fm[cp], log_fy, fy),
            )
            np.add.at(log_terms, cp, claim_terms)

        log_terms = np.where(np.isnan(log_terms), -np.inf, log_terms)
        total = special.logsumexp(log_terms, axis=1)
        tail = log_terms[:, -1] - total
        unconverged = np.isfinite(total) & (tail > math.log(SERIES_TOL))
        if not unconverged.any():
            return total
        if span >= SERIES_CAP:
            bad = data.policy_ids[unconverged].tolist()
            raise NumericError(
                f"truncated likelihood series did not converge within {SERIES_CAP} terms",
                policy_ids=bad[:10],
            )
        span = min(2 * span, SERIES_CAP)
        logger.debug(f"extending truncated series to {span} terms")


def _single(model: CompoundModel, record: PolicyRecord, scheme: str) -> float:
    if record.scheme != scheme:
        raise DataValidationError(
            f"policy {record.policy_id} uses scheme '{record.scheme}', expected '{scheme}'", [record.policy_id]
        )
    return float(policy_logliks(model, Dataset([record]))[0])


def loglik_complete(model: CompoundModel, record: PolicyRecord) -> float:
    return _single(model, record, "complete")


def loglik_censored(model: CompoundModel, record: PolicyRecord) -> float:
    return _single(model, record, "censored")


def loglik_truncated(model: CompoundModel, record: PolicyRecord) -> float:
    return _single(model, record, "truncated")

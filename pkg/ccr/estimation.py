# ccr/estimation.py
"""
Maximum-likelihood fitting of copula-linked frequency-severity models.

Two-stage: the count block is fitted alone, then severity and copula with the
count block held fixed. Full MLE: all blocks jointly, started from the
two-stage estimate. Optimisation runs in the unconstrained space defined by
each parameter's transform; standard errors come from a central-difference
Hessian mapped back with the delta method.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import optimize, stats

from ccr.compound import CompoundModel, CompoundModelSpec, Dataset, count_designs, portfolio_loglik
from ccr.copulas import ARCHIMEDEAN, TABLE_VARIANTS, param_from_tau, tau_from_param
from ccr.errors import CCRError, DomainError, EstimationError
from ccr.marginals import count_logpmf
from ccr.params import ParamVector, jacobian

logger = logging.getLogger(__name__)

__all__ = [
    "FitResult", "Convergence", "ModelComparison", "ParamVector",
    "fit_two_stage", "fit_full", "fit_independence", "fit_copula_variants",
    "observed_information_se", "numerical_hessian", "model_selection", "starting_values",
]

METHODS = ("TwoStage", "FullMLE", "IndependenceBaseline")
PENALTY = 1e10
GTOL = 1e-5
FTOL = 1e-8
MAX_ITER = 2000
N_STARTS = 5


@dataclass
class Convergence:
    status: str
    iterations: int = 0
    gradient_norm: float = math.nan
    optimizer: str = "BFGS"
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "optimizer": self.optimizer,
            "message": self.message,
        }


@dataclass
class FitResult:
    """Estimates, standard errors and fit statistics of one fitted model."""

    spec: CompoundModelSpec
    params: ParamVector
    std_errors: np.ndarray
    loglik: float
    n_policies: int
    method: str
    convergence: Convergence
    scheme: str = "complete"
    fingerprint: str = ""
    se_status: str = "ok"
    stage_logliks: dict = field(default_factory=dict)

    @property
    def model(self) -> CompoundModel:
        return CompoundModel(self.spec, self.params)

    @property
    def n_params(self) -> int:
        return len(self.params)

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_params * math.log(self.n_policies)

    @property
    def converged(self) -> bool:
        return self.convergence.converged

    @property
    def label(self) -> str:
        return self.spec.label

    def kendall_tau(self) -> float:
        return tau_from_param(self.model.copula())

    def summary(self) -> pd.DataFrame:
        rows = [
            {"block": e.block, "name": e.name, "estimate": e.value, "std_error": se}
            for e, se in zip(self.params, self.std_errors)
        ]
        return pd.DataFrame(rows)

    def to_dict(self) -> dict:
        blocks: dict[str, list] = {"frequency": [], "severity": [], "copula": []}
        for entry, se in zip(self.params, self.std_errors):
            blocks[entry.block].append({
                "name": entry.name,
                "estimate": entry.value,
                "std_error": None if not np.isfinite(se) else float(se),
                "transform": entry.transform,
            })
        return {
            "method": self.method,
            "model": {
                "frequency": self.spec.frequency,
                "severity": self.spec.severity,
                "copula": self.spec.copula,
                "rotation": self.spec.rotation,
                "label": self.spec.label,
                "covariates": {k: list(v) for k, v in self.spec.covariates().items()},
            },
            "scheme": self.scheme,
            "dataset_sha256": self.fingerprint,
            "n_policies": self.n_policies,
            "parameters": blocks,
            "loglik": self.loglik,
            "aic": self.aic,
            "bic": self.bic,
            "kendall_tau": self.kendall_tau(),
            "se_status": self.se_status,
            "stage_logliks": self.stage_logliks,
            "convergence": self.convergence.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "FitResult":
        model = payload["model"]
        cov = model.get("covariates", {})
        spec = CompoundModelSpec(
            frequency=model["frequency"],
            severity=model["severity"],
            copula=model["copula"],
            rotation=int(model.get("rotation", 0)),
            frequency_covariates=tuple(cov.get("frequency", ())),
            severity_covariates=tuple(cov.get("severity", ())),
            zero_covariates=tuple(cov.get("zero", ())),
            one_covariates=tuple(cov.get("one", ())),
        )
        rows, ses = [], []
        for block in ("frequency", "severity", "copula"):
            for item in payload["parameters"].get(block, []):
                rows.append({"block": block, **item})
                ses.append(math.nan if item.get("std_error") is None else item["std_error"])
        conv = payload.get("convergence", {})
        return cls(
            spec=spec,
            params=ParamVector.from_dict(rows),
            std_errors=np.array(ses, dtype=float),
            loglik=float(payload["loglik"]),
            n_policies=int(payload["n_policies"]),
            method=payload["method"],
            convergence=Convergence(
                status=conv.get("status", "converged"),
                iterations=int(conv.get("iterations", 0)),
                gradient_norm=float(conv.get("gradient_norm") or math.nan),
                optimizer=conv.get("optimizer", "BFGS"),
                message=conv.get("message", ""),
            ),
            scheme=payload.get("scheme", "complete"),
            fingerprint=payload.get("dataset_sha256", ""),
            se_status=payload.get("se_status", "ok"),
            stage_logliks=dict(payload.get("stage_logliks", {})),
        )


# --------------------------------------------------------------------------
# optimisation plumbing
# --------------------------------------------------------------------------

def _safe(fn: Callable[[np.ndarray], float]) -> Callable[[np.ndarray], float]:
    """Negated, penalised objective: invalid parameters map to PENALTY instead of raising."""

    def wrapped(z):
        try:
            with np.errstate(all="ignore"):
                value = fn(z)
        except (CCRError, ValueError, OverflowError, ZeroDivisionError, FloatingPointError) as e:
            logger.debug(f"objective rejected point: {e}")
            return PENALTY
        if not np.isfinite(value):
            return PENALTY
        return -value

    return wrapped


def _maximize(loglik: Callable[[np.ndarray], float], z0: np.ndarray, scale: float) -> tuple[np.ndarray, Convergence]:
    """BFGS on -loglik/scale, falling back to Nelder-Mead when the line search fails."""
    objective = _safe(lambda z: loglik(z) / scale)
    z0 = np.asarray(z0, dtype=float)
    if objective(z0) >= PENALTY:
        raise EstimationError("log-likelihood is not finite at the starting values")

    res = optimize.minimize(objective, z0, method="BFGS", options={"gtol": GTOL, "maxiter": MAX_ITER})
    grad_norm = float(np.linalg.norm(res.jac)) if res.jac is not None else math.nan
    if res.success:
        return res.x, Convergence("converged", int(res.nit), grad_norm, "BFGS", str(res.message))

    logger.warning(f"⚠️ BFGS stopped ({res.message}); switching to Nelder-Mead")
    start = res.x if res.fun <= objective(z0) else z0
    nm = optimize.minimize(
        objective, start, method="Nelder-Mead",
        options={"xatol": FTOL, "fatol": FTOL, "maxiter": MAX_ITER * max(1, len(z0)), "adaptive": True},
    )
    best = nm if nm.fun <= res.fun else res
    # Nelder-Mead success is judged on the simplex; BFGS stopping on precision loss
    # with a small gradient counts as a stationary point too
    grad = optimize.approx_fprime(best.x, objective, 1e-6)
    grad_norm = float(np.linalg.norm(grad))
    status = "converged" if (nm.success or grad_norm < 10 * GTOL * max(1, len(z0))) else "not_converged"
    return best.x, Convergence(status, int(res.nit) + int(nm.nit), grad_norm, "BFGS+Nelder-Mead", str(nm.message))


def _multi_start(loglik, z0, scale, starts: int, seed: int) -> tuple[np.ndarray, Convergence]:
    rng = np.random.default_rng(seed)
    best_z, best_conv = _maximize(loglik, z0, scale)
    best_value = loglik(best_z)
    for k in range(1, starts):
        jittered = z0 + rng.normal(scale=0.25, size=z0.shape)
        try:
            z, conv = _maximize(loglik, jittered, scale)
        except EstimationError:
            continue
        value = loglik(z)
        logger.debug(f"multi-start {k}: loglik {value:.6f} ({conv.status})")
        if np.isfinite(value) and (value > best_value + 1e-9 or (not best_conv.converged and conv.converged)):
            best_z, best_conv, best_value = z, conv, value
    return best_z, best_conv


def numerical_hessian(fn: Callable[[np.ndarray], float], z, steps=None) -> np.ndarray:
    """Central-difference Hessian with h_i = max(1e-5, 1e-4 |z_i|) unless steps are given."""
    z = np.asarray(z, dtype=float)
    h = np.maximum(1e-5, 1e-4 * np.abs(z)) if steps is None else np.broadcast_to(steps, z.shape)
    k = z.size
    f0 = fn(z)
    hess = np.empty((k, k))

    def at(*moves):
        point = z.copy()
        for i, sign in moves:
            point[i] += sign * h[i]
        return fn(point)

    for i in range(k):
        hess[i, i] = (at((i, 1)) - 2.0 * f0 + at((i, -1))) / h[i] ** 2
        for j in range(i):
            value = (at((i, 1), (j, 1)) - at((i, 1), (j, -1)) - at((i, -1), (j, 1)) + at((i, -1), (j, -1)))
            hess[i, j] = hess[j, i] = value / (4.0 * h[i] * h[j])
    return hess


def observed_information_se(model: CompoundModel, data: Dataset, at: ParamVector | None = None,
                            mask=None, loglik: Callable | None = None) -> tuple[np.ndarray, str]:
    """
    Standard errors sqrt(diag((-H)^-1)) in the constrained space.

    `mask` restricts the Hessian to a parameter subset, the others held fixed;
    entries outside the mask get nan. Returns the SE vector and a status
    ("ok" or "unreliable" when -H is not positive definite).
    """
    at = at if at is not None else model.params
    mask = np.ones(len(at), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    z_all = at.unconstrained()
    z = z_all[mask]
    objective = loglik or (lambda p: portfolio_loglik(model.with_params(p), data))

    def fn(zm):
        value = objective(at.with_unconstrained(zm, mask))
        return value if np.isfinite(value) else -PENALTY

    info = -numerical_hessian(fn, z)
    se = np.full(len(at), np.nan)
    try:
        np.linalg.cholesky(info)
        cov = np.linalg.inv(info)
        status = "ok"
    except np.linalg.LinAlgError:
        logger.warning("⚠️ observed information is not positive definite; standard errors unreliable")
        cov = np.linalg.pinv(info)
        status = "unreliable"
    var = np.diag(cov)
    jac = np.array([float(jacobian(t, v)) for t, v in zip(np.array(at.transforms)[mask], z)])
    with np.errstate(invalid="ignore"):
        se[mask] = np.where(var >= 0, np.abs(jac) * np.sqrt(np.abs(var)), np.nan)
    return se, status


# --------------------------------------------------------------------------
# starting values
# --------------------------------------------------------------------------

def _ground_up_claims(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Approximate ground-up amounts of the fully observed claims and their row index."""
    rows = np.flatnonzero(~data.claim_below & ~data.claim_at_limit)
    amounts = data.claim_amount[rows] + data.deductible[data.claim_policy[rows]]
    return amounts, rows


def starting_values(spec: CompoundModelSpec, data: Dataset) -> ParamVector:
    """Moment-based starting point: log-mean counts, log-linear severities, copula from Kendall's tau."""
    params = spec.default_params()
    values: dict[str, float] = {}
    mean_n = max(float(np.mean(data.n)), 1e-3)
    values["frequency.intercept"] = math.log(mean_n)
    if spec.frequency.endswith("negbin"):
        var_n = float(np.var(data.n))
        values["frequency.dispersion"] = float(np.clip(mean_n**2 / max(var_n - mean_n, 1e-3), 0.05, 100.0))

    amounts, rows = _ground_up_claims(data)
    if amounts.size >= 2:
        x = data.design(spec.severity_covariates, "claim")[rows]
        beta, *_ = np.linalg.lstsq(x, np.log(amounts), rcond=None)
        resid = np.log(amounts) - x @ beta
        names = ("intercept", *spec.severity_covariates)
        if spec.severity == "gamma":
            ratio = amounts / np.exp(x @ beta)
            beta[0] += math.log(float(np.mean(ratio)))
            cv2 = float(np.var(ratio) / np.mean(ratio) ** 2)
            values["severity.shape"] = float(np.clip(1.0 / max(cv2, 1e-3), 0.05, 1000.0))
        else:
            values["severity.sigma"] = float(np.clip(np.std(resid) * math.sqrt(3.0) / math.pi, 0.05, 10.0))
        values.update({f"severity.{n}": float(b) for n, b in zip(names, beta)})

        if spec.copula != "independence":
            counts = data.n[data.claim_policy[rows]]
            tau = 0.0
            if np.ptp(counts) > 0:
                tau = float(np.nan_to_num(stats.kendalltau(counts, amounts)[0]))
            values.update(_copula_start(spec, tau))
    return params.replace(values)


def _copula_start(spec: CompoundModelSpec, tau: float) -> dict[str, float]:
    tau = float(np.clip(tau, -0.8, 0.8))
    if spec.copula in ARCHIMEDEAN and spec.copula != "frank":
        tau = min(tau, -0.05) if spec.rotation else max(tau, 0.05)
    try:
        cop = param_from_tau(spec.copula, tau, spec.rotation, df=10.0 if spec.copula == "t" else None)
    except (DomainError, ValueError):
        return {}
    values = {"copula.theta": cop.theta}
    if spec.copula == "t":
        values["copula.df"] = 10.0
    return values


# --------------------------------------------------------------------------
# fits
# --------------------------------------------------------------------------

def count_loglik(model: CompoundModel, data: Dataset) -> float:
    """Stage-one objective sum_i log f_N(n_i)."""
    family, mp = model.count_law(*count_designs(model, data))
    values = count_logpmf(family, mp, data.n)
    return math.fsum(values.tolist()) if np.all(np.isfinite(values)) else -math.inf


def _result(spec, params, data, method, conv, se, se_status, stage_logliks=None) -> FitResult:
    loglik = portfolio_loglik(CompoundModel(spec, params), data)
    return FitResult(
        spec=spec, params=params, std_errors=se, loglik=loglik, n_policies=len(data),
        method=method, convergence=conv, scheme=data.scheme, fingerprint=data.fingerprint(),
        se_status=se_status, stage_logliks=stage_logliks or {},
    )


def _check_identifiable(spec: CompoundModelSpec, data: Dataset) -> None:
    spec.check_columns(data.policy_columns, data.claim_columns)
    if data.n_claims == 0:
        raise EstimationError("severity unidentifiable: no policy has a claim")
    if data.scheme == "truncated":
        claim_only = [c for c in spec.severity_covariates if c not in data.policy_columns]
        if claim_only:
            raise EstimationError(
                f"per-payment data needs policy-level severity covariates; {claim_only} are claim-level"
            )


def fit_two_stage(spec: CompoundModelSpec, data: Dataset, init: ParamVector | None = None,
                  method: str = "TwoStage", compute_se: bool = True) -> FitResult:
    """Count block by its own likelihood, then severity and copula given the count estimates."""
    _check_identifiable(spec, data)
    if data.scheme == "truncated":
        raise EstimationError("two-stage estimation needs the claim counts, unavailable for per-payment data")
    params = init if init is not None else starting_values(spec, data)
    scale = float(len(data))

    freq = params.mask(["frequency"])
    rest = ~freq
    z1, conv1 = _maximize(
        lambda z: count_loglik(CompoundModel(spec, params.with_unconstrained(z, freq)), data),
        params.unconstrained()[freq], scale,
    )
    params = params.with_unconstrained(z1, freq)
    stage1 = count_loglik(CompoundModel(spec, params), data)
    logger.info(f"📊 stage 1 ({spec.frequency}): loglik {stage1:.4f} [{conv1.status}]")

    z2, conv2 = _maximize(
        lambda z: portfolio_loglik(CompoundModel(spec, params.with_unconstrained(z, rest)), data),
        params.unconstrained()[rest], scale,
    )
    params = params.with_unconstrained(z2, rest)
    conv = Convergence(
        "converged" if conv1.converged and conv2.converged else "not_converged",
        conv1.iterations + conv2.iterations,
        max(conv1.gradient_norm, conv2.gradient_norm),
        conv2.optimizer,
        f"stage 1: {conv1.status}; stage 2: {conv2.status}",
    )

    se = np.full(len(params), np.nan)
    se_status = "stage_conditional"
    if compute_se:
        model = CompoundModel(spec, params)
        se1, s1 = observed_information_se(
            model, data, params, freq, loglik=lambda p: count_loglik(CompoundModel(spec, p), data)
        )
        se2, s2 = observed_information_se(model, data, params, rest)
        se = np.where(freq, se1, se2)
        if "unreliable" in (s1, s2):
            se_status = "unreliable"
    result = _result(spec, params, data, method, conv, se, se_status, {"stage1": stage1})
    result.stage_logliks["stage2"] = result.loglik - stage1
    logger.info(f"✅ two-stage {spec.label}: loglik {result.loglik:.4f} [{conv.status}]")
    return result


def fit_full(spec: CompoundModelSpec, data: Dataset, init: ParamVector | None = None,
             method: str = "FullMLE", starts: int = N_STARTS, seed: int = 0,
             compute_se: bool = True) -> FitResult:
    """
    Joint maximisation of the full log-likelihood.

    Without `init` the two-stage estimate is the starting point (starting
    values for per-payment data). When the two-stage fit did not converge the
    search restarts from `starts` jittered points and keeps the best.
    """
    _check_identifiable(spec, data)
    baseline = None
    needs_restarts = False
    if init is None:
        if data.scheme == "truncated":
            init = starting_values(spec, data)
            needs_restarts = True
        else:
            baseline = fit_two_stage(spec, data, compute_se=False)
            init = baseline.params
            needs_restarts = not baseline.converged

    def loglik(z):
        return portfolio_loglik(CompoundModel(spec, init.with_unconstrained(z)), data)

    z0 = init.unconstrained()
    scale = float(len(data))
    if needs_restarts and starts > 1:
        logger.info(f"multi-start full MLE with {starts} starting points")
        z, conv = _multi_start(loglik, z0, scale, starts, seed)
    else:
        z, conv = _maximize(loglik, z0, scale)
    params = init.with_unconstrained(z)

    if baseline is not None and loglik(z) < baseline.loglik - 1e-6:
        logger.warning("⚠️ joint optimum below the two-stage value; keeping the two-stage estimate")
        params = baseline.params

    se, se_status = np.full(len(params), np.nan), "skipped"
    if compute_se:
        se, se_status = observed_information_se(CompoundModel(spec, params), data, params)
    result = _result(spec, params, data, method, conv, se, se_status)
    if baseline is not None:
        result.stage_logliks["two_stage"] = baseline.loglik
    logger.info(f"✅ {method} {spec.label}: loglik {result.loglik:.4f}, AIC {result.aic:.2f} [{conv.status}]")
    return result


def fit_independence(spec: CompoundModelSpec, data: Dataset, compute_se: bool = True) -> FitResult:
    """The same likelihood under the Independence copula, honouring the observation scheme."""
    return fit_full(spec.with_copula("independence"), data, method="IndependenceBaseline",
                    compute_se=compute_se)


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------

@dataclass
class ModelComparison:
    table: pd.DataFrame
    lrt: dict | None = None

    def to_dict(self) -> dict:
        return {"models": self.table.to_dict(orient="records"), "lrt": self.lrt}


def likelihood_ratio_test(restricted: FitResult, full: FitResult) -> dict:
    df = full.n_params - restricted.n_params
    if df <= 0:
        raise EstimationError("likelihood ratio test needs the larger model second")
    statistic = max(2.0 * (full.loglik - restricted.loglik), 0.0)
    return {
        "restricted": restricted.label,
        "full": full.label,
        "statistic": statistic,
        "df": df,
        "p_value": float(stats.chi2.sf(statistic, df)),
    }


def model_selection(fits: Sequence[FitResult], nested: tuple[int, int] | None = None) -> ModelComparison:
    """AIC/BIC ranking of fits on one dataset, plus an LRT for a nested (restricted, full) index pair."""
    if not fits:
        raise EstimationError("no fits to compare")
    hashes = {f.fingerprint for f in fits}
    if len(hashes) > 1:
        raise EstimationError("fits were computed on different datasets")
    table = pd.DataFrame([
        {
            "model": f.label,
            "method": f.method,
            "n_params": f.n_params,
            "kendall_tau": f.kendall_tau(),
            "loglik": f.loglik,
            "aic": f.aic,
            "bic": f.bic,
            "converged": f.converged,
        }
        for f in fits
    ])
    table["aic_rank"] = table["aic"].rank(method="min").astype(int)
    table["bic_rank"] = table["bic"].rank(method="min").astype(int)
    lrt = None
    if nested is not None:
        lrt = likelihood_ratio_test(fits[nested[0]], fits[nested[1]])
    return ModelComparison(table, lrt)


def fit_copula_variants(spec: CompoundModelSpec, data: Dataset,
                        variants: Sequence[tuple[str, int]] = TABLE_VARIANTS,
                        method: str = "FullMLE", bins: int = 5) -> ModelComparison:
    """Fit one model per copula variant and tabulate tau, loglik, AIC, BIC and the count chi-square."""
    from ccr.diagnostics import pearson_chisq_counts

    fitter = fit_full if method == "FullMLE" else fit_two_stage
    fits, chisq = [], []
    for family, rotation in variants:
        variant = spec.with_copula(family, rotation)
        logger.info(f"fitting copula variant {variant.label}")
        fit = fitter(variant, data, compute_se=False)
        fits.append(fit)
        chisq.append(pearson_chisq_counts(fit, data, bins).statistic)
    comparison = model_selection(fits)
    comparison.table["pearson_chisq"] = chisq
    best = comparison.table.loc[comparison.table["aic"].idxmin(), "model"]
    logger.info(f"📊 {len(fits)} copula variants fitted; lowest AIC: {best}")
    return comparison

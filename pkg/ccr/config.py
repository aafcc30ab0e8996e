# ccr/config.py
"""Process settings from the environment and per-run configuration from TOML."""

from __future__ import annotations

import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from dotenv import load_dotenv

from ccr.compound import SCHEMES, CompoundModelSpec
from ccr.copulas import ARCHIMEDEAN, FAMILIES, ROTATIONS
from ccr.errors import ConfigError, DomainError
from ccr.marginals import COUNT_KINDS, SEVERITY_KINDS

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

SPEC_VERSION = 1
SECTIONS = ("model", "data", "simulate", "recover", "score", "riskrank", "output", "spec_version")
SECTION_KEYS = {
    "model": {"frequency", "severity", "copula", "rotation", "df", "compare_variants", "covariates"},
    "data": {"scheme", "holdout_year", "deductible", "limit"},
    "simulate": {"seed", "taus", "families", "experiment_sims", "n_sims", "grid_points", "ns", "count_bins"},
    "recover": {"threads", "design", "rho", "methods", "size", "replications", "deductible", "limit"},
    "score": {"n_sims", "premium_column", "n_boot"},
    "riskrank": {"n_sims", "alphas", "var_sims", "replicates"},
    "output": {"dir", "plots"},
}

load_dotenv()


def _env_int(name: str, default: int | None) -> int | None:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"⚠️ {name}={raw!r} is not an integer; using {default}")
        return default


@dataclass
class Settings:
    """Process-level defaults with safe environment variable handling."""

    THREADS: int | None = _env_int("CCR_THREADS", None)
    SEED: int | None = _env_int("CCR_SEED", None)
    LOG_DIR: str = os.getenv("CCR_LOG_DIR", "logs")
    OUTPUT_DIR: str | None = os.getenv("CCR_OUTPUT_DIR") or None

    def __post_init__(self):
        if self.THREADS is not None and self.THREADS < 1:
            logger.warning(f"⚠️ CCR_THREADS={self.THREADS} is not usable; running single-threaded")
            self.THREADS = 1
        if self.SEED is not None and self.SEED < 0:
            logger.warning(f"⚠️ CCR_SEED={self.SEED} is negative; ignoring it")
            self.SEED = None


@dataclass
class ModelSection:
    frequency: str = "poisson"
    severity: str = "gamma"
    copula: str = "gaussian"
    rotation: int = 0
    df: float | None = None
    compare_variants: bool = False
    covariates: dict[str, list[str]] = field(default_factory=dict)

    def spec(self) -> CompoundModelSpec:
        cov = self.covariates
        return CompoundModelSpec(
            frequency=self.frequency,
            severity=self.severity,
            copula=self.copula,
            rotation=self.rotation,
            frequency_covariates=tuple(cov.get("frequency", ())),
            severity_covariates=tuple(cov.get("severity", ())),
            zero_covariates=tuple(cov.get("zero", ())),
            one_covariates=tuple(cov.get("one", ())),
        )


@dataclass
class RunConfig:
    """One batch run: model, observation scheme, seed, worker count and command options."""

    model: ModelSection = field(default_factory=ModelSection)
    command: str = "fit"
    scheme: str = "complete"
    holdout_year: int | None = None
    seed: int = 0
    threads: int = 1
    output_dir: str = "output"
    deductible: float = 0.0
    limit: float = math.inf
    simulate: dict[str, Any] = field(default_factory=dict)
    recover: dict[str, Any] = field(default_factory=dict)
    score: dict[str, Any] = field(default_factory=dict)
    riskrank: dict[str, Any] = field(default_factory=dict)
    plots: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown observation scheme '{self.scheme}'; expected one of {SCHEMES}")
        m = self.model
        if m.frequency not in COUNT_KINDS:
            raise ConfigError(f"unknown frequency family '{m.frequency}'")
        if m.severity not in SEVERITY_KINDS:
            raise ConfigError(f"unknown severity family '{m.severity}'")
        if m.copula.lower() not in FAMILIES:
            raise ConfigError(f"unknown copula family '{m.copula}'")
        if m.rotation not in ROTATIONS or (m.rotation and m.copula.lower() not in ARCHIMEDEAN):
            raise ConfigError(f"rotation {m.rotation} is not available for the {m.copula} copula")
        if m.df is not None and not m.df > 0:
            raise ConfigError(f"t copula degrees of freedom must be positive, got {m.df}")
        unknown = set(m.covariates) - {"frequency", "severity", "zero", "one"}
        if unknown:
            raise ConfigError(f"unknown covariate groups {sorted(unknown)}")
        if not (self.deductible >= 0 and self.limit > self.deductible):
            raise ConfigError(f"[data] needs 0 <= deductible < limit, got {self.deductible} and {self.limit}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

    @property
    def spec(self) -> CompoundModelSpec:
        try:
            return self.model.spec()
        except DomainError as e:
            raise ConfigError(str(e)) from e

    def option(self, section: str, key: str, default=None):
        return getattr(self, section).get(key, default)

    @classmethod
    def from_mapping(cls, doc: Mapping[str, Any]) -> "RunConfig":
        if doc.get("spec_version") != SPEC_VERSION:
            raise ConfigError(f"spec_version must be {SPEC_VERSION}, got {doc.get('spec_version')!r}")
        unknown = set(doc) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown configuration sections {sorted(unknown)}")
        for section, allowed in SECTION_KEYS.items():
            body = doc.get(section, {})
            if not isinstance(body, Mapping):
                raise ConfigError(f"[{section}] must be a table")
            unknown = set(body) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
        model_doc = dict(doc.get("model", {}))
        covariates = {k: list(v) for k, v in dict(model_doc.pop("covariates", {})).items()}
        try:
            model = ModelSection(covariates=covariates, **model_doc)
        except TypeError as e:
            raise ConfigError(f"[model]: {e}") from e
        data = dict(doc.get("data", {}))
        output = dict(doc.get("output", {}))
        return cls(
            model=model,
            scheme=data.get("scheme", "complete"),
            holdout_year=data.get("holdout_year"),
            seed=int(doc.get("simulate", {}).get("seed", 0)),
            threads=int(doc.get("recover", {}).get("threads", 1)),
            output_dir=output.get("dir", "output"),
            deductible=float(data.get("deductible", 0.0)),
            limit=float(data.get("limit", math.inf)),
            simulate=dict(doc.get("simulate", {})),
            recover=dict(doc.get("recover", {})),
            score=dict(doc.get("score", {})),
            riskrank=dict(doc.get("riskrank", {})),
            plots=bool(output.get("plots", True)),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path, "rb") as f:
                doc = tomllib.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"configuration file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from e
        return cls.from_mapping(doc)

    def resolve(self, settings: Settings, seed: int | None = None, threads: int | None = None,
                output_dir: str | None = None) -> "RunConfig":
        """Apply CLI flags, then environment, over the file values."""
        if seed is not None:
            self.seed = seed
        elif settings.SEED is not None:
            self.seed = settings.SEED
        if threads is not None:
            self.threads = threads
        elif settings.THREADS is not None:
            self.threads = settings.THREADS
        if output_dir is not None:
            self.output_dir = output_dir
        elif settings.OUTPUT_DIR:
            self.output_dir = settings.OUTPUT_DIR
        if self.threads < 1 or self.seed < 0:
            raise ConfigError("threads must be at least 1 and seed nonnegative")
        return self

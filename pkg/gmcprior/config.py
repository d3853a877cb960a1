"""Configuration management for gmcprior.

This module handles process-level settings (worker caps, log level, output
location) read from environment variables, the validated configuration
models shared by the samplers and the simulation study, and the flat
``key=value`` run-config files used by the command line. Settings are loaded
from a .env file if present.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Literal, Mapping, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

# Load environment variables from .env file
load_dotenv()


@dataclass(frozen=True)
class Settings:
    """Process settings.

    All settings are immutable (frozen=True). Values can be overridden via
    environment variables.

    Attributes:
        threads: Upper bound on concurrent chains / simulation replicates.
                 Set via GMC_THREADS. Default: available CPUs.
        log_level: Logging level name for the gmcprior logger (GMC_LOG_LEVEL).
        output_dir: Root directory for run bundles when --out is not given
                    (GMC_OUTPUT_DIR).
        horizon_days: Administrative censoring horizon for survival ingestion
                      (GMC_HORIZON_DAYS). Default: two years of follow-up.
    """
    threads: int = int(os.getenv("GMC_THREADS", str(os.cpu_count() or 1)))
    log_level: str = os.getenv("GMC_LOG_LEVEL", "INFO").upper()
    output_dir: str = os.getenv("GMC_OUTPUT_DIR", "artifacts/runs")
    horizon_days: float = float(os.getenv("GMC_HORIZON_DAYS", "730"))


# Global settings instance - import this in other modules
settings = Settings()


class SamplerConfig(BaseModel):
    """Chain layout for one fit.

    ``iterations`` counts post-burn-in sweeps; every ``thin``-th one is kept,
    so each chain stores ``iterations // thin`` draws.
    """
    model_config = ConfigDict(frozen=True)

    chains: int = Field(default=2, ge=1)
    burn_in: int = Field(default=1000, ge=0)
    iterations: int = Field(default=5000, ge=1)
    thin: int = Field(default=1, ge=1)
    seed: int = Field(default=20150601, ge=0, lt=2**64)
    workers: Optional[int] = Field(default=None, ge=1)

    @property
    def stored(self) -> int:
        return self.iterations // self.thin


class CommensurateHyper(BaseModel):
    """Spike-and-slab commensurate prior for a single parameter (the intercept)."""
    model_config = ConfigDict(frozen=True)

    s_l: float = Field(default=0.0, ge=0.0)
    s_u: float = 2.0
    R: float = 2000.0
    p0: float = Field(default=0.5, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _ordered(self) -> "CommensurateHyper":
        if not (self.s_l < self.s_u < self.R):
            raise ValueError(f"need 0 <= s_l < s_u < R, got s_l={self.s_l}, s_u={self.s_u}, R={self.R}")
        return self


class GmcHyper(BaseModel):
    """Generalized mixture commensurate prior: spike precision and Beta(a1, a2) on nu."""
    model_config = ConfigDict(frozen=True)

    R: float = Field(default=2000.0, gt=0.0)
    a1: float = Field(default=0.5, gt=0.0)
    a2: float = Field(default=0.5, gt=0.0)


# Hyperparameter presets for the simulation study and the two case studies
REGRESSION_SIM_PRESET = {
    "intercept": CommensurateHyper(s_l=0.0, s_u=2.0, R=2000.0, p0=0.50),
    "curve": GmcHyper(R=2000.0, a1=0.50, a2=0.50),
}
CTP_PRESET = {
    "intercept": CommensurateHyper(s_l=0.01, s_u=0.50, R=500.0, p0=0.10),
    "curve": GmcHyper(R=500.0, a1=0.10, a2=0.90),
}
SURVIVAL_PRESET = {
    "curve": GmcHyper(R=10000.0, a1=0.10, a2=0.90),
}

IndicatorMode = Literal["collapsed", "conditional"]
ForceIndicators = Literal["free", "all_zero", "all_one"]

KNOWN_KEYS = frozenset({
    "chains", "burn_in", "iterations", "thin", "seed", "workers",
    "K", "spacing", "level",
    "s_l", "s_u", "R", "p0", "R_b", "a1", "a2",
    "force_indicators", "indicator_update",
    "R_gamma", "jump_scale", "horizon_days",
    "d_grid", "N", "N0", "sigma", "sigma0", "M", "d_mode",
})


def load_run_config(path: str | Path) -> Dict[str, str]:
    """Read a flat ``key=value`` run-config file.

    Blank lines and lines starting with ``#`` are ignored. Keys must come
    from ``KNOWN_KEYS``.

    Raises:
        ConfigError: on malformed lines, duplicate or unknown keys.
    """
    raw: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
            key, value = (part.strip() for part in text.split("=", 1))
            if key not in KNOWN_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            raw[key] = value
    return raw


def _build(model: type[BaseModel], base: Optional[BaseModel], values: Mapping[str, object]) -> BaseModel:
    data = base.model_dump() if base is not None else {}
    data.update({k: v for k, v in values.items() if v is not None})
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid {model.__name__}: {e}") from e


def sampler_from(raw: Mapping[str, object], default: Optional[SamplerConfig] = None) -> SamplerConfig:
    keys = ("chains", "burn_in", "iterations", "thin", "seed", "workers")
    return _build(SamplerConfig, default or SamplerConfig(), {k: raw.get(k) for k in keys})


def commensurate_from(raw: Mapping[str, object], default: CommensurateHyper) -> CommensurateHyper:
    keys = ("s_l", "s_u", "R", "p0")
    return _build(CommensurateHyper, default, {k: raw.get(k) for k in keys})


def gmc_from(raw: Mapping[str, object], default: GmcHyper, r_key: str = "R_b") -> GmcHyper:
    return _build(GmcHyper, default, {"R": raw.get(r_key), "a1": raw.get("a1"), "a2": raw.get("a2")})

"""Data containers shared across gmcprior.

This module defines the datasets the models consume, the posterior draw
storage every fit produces, and the small summary records that flow from
the models into the simulation study and the result bundles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, TypedDict

import numpy as np

from .errors import DimensionMismatch, DomainError, MissingHierarchy, UnknownTreatment

SOURCES = ("primary", "supplemental")
TISSUES = ("cancerous", "noncancerous")


def _as_labels(values: Sequence[Any], n: int, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.shape != (n,):
        raise DimensionMismatch(f"{name} has shape {arr.shape}, expected ({n},)")
    return arr


@dataclass(frozen=True)
class RegressionDataset:
    """Gaussian regression observations from one or both sources.

    Attributes:
        y: responses
        t: covariate rescaled to [0, 1]
        source: "primary" or "supplemental" per row
        individual, region, tissue: hierarchy labels for perfusion-curve data;
            present together or absent together. ``tissue`` is "cancerous"
            (primary role) or "noncancerous" (supplemental role).
    """
    y: np.ndarray
    t: np.ndarray
    source: np.ndarray
    individual: Optional[np.ndarray] = None
    region: Optional[np.ndarray] = None
    tissue: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if y.ndim != 1 or y.shape != t.shape:
            raise DimensionMismatch(f"y has shape {y.shape} but t has shape {t.shape}")
        if t.size and (t.min() < 0.0 or t.max() > 1.0):
            raise DomainError("t must lie in [0, 1]")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        source = _as_labels(self.source, y.size, "source").astype(str)
        if not np.isin(source, SOURCES).all():
            raise DomainError(f"source must be one of {SOURCES}")
        object.__setattr__(self, "source", source)

        hierarchy = (self.individual, self.region, self.tissue)
        present = [h is not None for h in hierarchy]
        if any(present) and not all(present):
            raise MissingHierarchy("individual, region and tissue must be given together")
        if all(present):
            object.__setattr__(self, "individual", _as_labels(self.individual, y.size, "individual").astype(int))
            object.__setattr__(self, "region", _as_labels(self.region, y.size, "region").astype(int))
            tissue = _as_labels(self.tissue, y.size, "tissue").astype(str)
            if not np.isin(tissue, TISSUES).all():
                raise DomainError(f"tissue must be one of {TISSUES}")
            object.__setattr__(self, "tissue", tissue)

    def __len__(self) -> int:
        return int(self.y.size)

    @property
    def has_hierarchy(self) -> bool:
        return self.tissue is not None

    def subset(self, mask: np.ndarray) -> "RegressionDataset":
        mask = np.asarray(mask, dtype=bool)
        pick = lambda a: None if a is None else a[mask]
        return RegressionDataset(self.y[mask], self.t[mask], self.source[mask],
                                 pick(self.individual), pick(self.region), pick(self.tissue))

    def select(self, source: str) -> "RegressionDataset":
        return self.subset(self.source == source)

    @classmethod
    def from_arrays(cls, y, t, source: str = "primary") -> "RegressionDataset":
        y = np.asarray(y, dtype=float)
        return cls(y, np.asarray(t, dtype=float), np.full(y.size, source))


def pool(*datasets: RegressionDataset) -> RegressionDataset:
    """Concatenate regression datasets, relabelling every row as primary."""
    y = np.concatenate([d.y for d in datasets])
    t = np.concatenate([d.t for d in datasets])
    return RegressionDataset(y, t, np.full(y.size, "primary"))


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored event times on the rescaled (0, 1] axis.

    Attributes:
        time: event or censoring time in (0, 1]
        event: 1 = progression/death observed, 0 = censored
        covariates: n x p matrix of binary treatment indicators (p may be 0)
        treatments: names of the covariate columns, e.g. ("z_F", "z_I")
        source: "primary" or "supplemental" per row
    """
    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray
    treatments: Tuple[str, ...]
    source: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event).astype(int)
        n = time.size
        if event.shape != time.shape:
            raise DimensionMismatch("time and event lengths differ")
        if n and (time.min() <= 0.0 or time.max() > 1.0):
            raise DomainError("time must lie in (0, 1]")
        if not np.isin(event, (0, 1)).all():
            raise DomainError("event must be 0 or 1")
        treatments = tuple(self.treatments)
        cov = np.asarray(self.covariates, dtype=float).reshape(n, len(treatments))
        source = _as_labels(self.source, n, "source").astype(str)
        if not np.isin(source, SOURCES).all():
            raise DomainError(f"source must be one of {SOURCES}")
        if cov.size and np.any(cov[source == "supplemental"] != 0):
            raise DomainError("supplemental rows must have all treatment indicators 0")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "treatments", treatments)
        object.__setattr__(self, "source", source)

    def __len__(self) -> int:
        return int(self.time.size)

    @property
    def events(self) -> int:
        return int(self.event.sum())

    def subset(self, mask: np.ndarray) -> "SurvivalDataset":
        mask = np.asarray(mask, dtype=bool)
        return SurvivalDataset(self.time[mask], self.event[mask], self.covariates[mask],
                               self.treatments, self.source[mask])

    def select(self, source: str) -> "SurvivalDataset":
        return self.subset(self.source == source)

    def arm(self, treatment: Optional[str]) -> "SurvivalDataset":
        """Rows on ``treatment`` (None selects the reference arm, all indicators 0)."""
        if treatment is None:
            return self.subset(~self.covariates.astype(bool).any(axis=1))
        if treatment not in self.treatments:
            raise UnknownTreatment(treatment)
        return self.subset(self.covariates[:, self.treatments.index(treatment)] == 1)

    def without_covariates(self) -> "SurvivalDataset":
        return SurvivalDataset(self.time, self.event, np.zeros((len(self), 0)), (), self.source)

    @classmethod
    def concat(cls, parts: Sequence["SurvivalDataset"]) -> "SurvivalDataset":
        treatments: List[str] = []
        for p in parts:
            treatments += [z for z in p.treatments if z not in treatments]
        cov = []
        for p in parts:
            block = np.zeros((len(p), len(treatments)))
            for j, z in enumerate(p.treatments):
                block[:, treatments.index(z)] = p.covariates[:, j]
            cov.append(block)
        return cls(np.concatenate([p.time for p in parts]),
                   np.concatenate([p.event for p in parts]),
                   np.vstack(cov) if cov else np.zeros((0, len(treatments))),
                   tuple(treatments),
                   np.concatenate([p.source for p in parts]))


@dataclass
class ChainSet:
    """Posterior draws of every chain of one fit.

    Attributes:
        names: ordered parameter labels, e.g. ``b[0]``, ``iota[3]``, ``nu``
        draws: chains x stored-iterations x parameters
        deviance: chains x stored-iterations, -2 log-likelihood per draw
        meta: model description needed to rebuild curves (knots, curve
              prefixes, treatment names, ...); JSON-serialisable
        accept_rates: acceptance fraction per Metropolis-type block and chain
    """
    names: List[str]
    draws: np.ndarray
    deviance: np.ndarray
    meta: Dict[str, Any] = field(default_factory=dict)
    accept_rates: Dict[str, List[float]] = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        self.deviance = np.asarray(self.deviance, dtype=float)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise DimensionMismatch(f"draws shape {self.draws.shape} does not match {len(self.names)} names")
        if self.deviance.shape != self.draws.shape[:2]:
            raise DimensionMismatch("deviance must be chains x stored-iterations")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_stored(self) -> int:
        return self.draws.shape[1]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no parameter named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        """Draws of one parameter, chains x stored-iterations."""
        return self.draws[:, :, self.index(name)]

    def pooled(self, name: str) -> np.ndarray:
        return self.column(name).reshape(-1)

    def block(self, prefix: str, size: int) -> np.ndarray:
        """Pooled draws of ``prefix[0..size-1]`` as (total draws) x size."""
        cols = [self.index(f"{prefix}[{k}]") for k in range(size)]
        return self.draws[:, :, cols].reshape(-1, size)

    def has(self, name: str) -> bool:
        return name in self.names


@dataclass(frozen=True)
class CurveSummary:
    """Pointwise posterior mean and equal-tailed credible band of a curve."""
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95

    @property
    def width(self) -> float:
        """Mean pointwise interval width."""
        return float(np.mean(self.upper - self.lower))


class CriteriaRecord(TypedDict):
    """One estimator's evaluation criteria in one simulation replicate."""
    replicate: int
    seed: int
    d: float
    estimator: str      # primary_alone | pooled | gmc
    me: float
    rmse: float
    criw: float
    cp: float

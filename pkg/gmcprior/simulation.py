"""Simulation study of borrowing behaviour as the sources become discordant.

Each replicate draws a discordance d, generates a primary sample from
mu(t) = 5t sin(5t) and a supplemental sample from (5+d)t sin((5+d)t), fits
three estimators of the primary curve (primary data alone, pooled data, GMC)
and scores each against the truth at the primary design points. Replicates
are independent tasks keyed by index, so the aggregate table does not depend
on worker count or completion order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from .config import REGRESSION_SIM_PRESET, CommensurateHyper, GmcHyper, SamplerConfig, settings
from .errors import DimensionMismatch, GmcError
from .models.regression import (
    GmcRegressionSpec,
    fit_regression_conventional,
    fit_regression_gmc,
    predict_curve,
)
from .sampler import derive_seed
from .state import CriteriaRecord, CurveSummary, RegressionDataset, pool
from .tools.spline_basis import build_partition

logger = logging.getLogger("gmcprior.simulation")

D_GRID = (0.0, 0.05, 0.10, 0.20, 0.35, 0.50, 0.75, 1.0, 1.50, 2.0, 3.0, 4.0, 5.0)
ESTIMATORS = ("primary_alone", "pooled", "gmc")
CRITERIA = ("me", "rmse", "criw", "cp")


class SimConfig(BaseModel):
    """Simulation study layout.

    ``d_mode="uniform"`` draws each replicate's d uniformly from ``d_grid``;
    ``"stratified"`` assigns d round-robin so every value gets M/|grid| replicates.
    """
    model_config = ConfigDict(frozen=True)

    d_grid: Tuple[float, ...] = D_GRID
    N: int = Field(default=50, ge=1)
    N0: int = Field(default=50, ge=1)
    sigma: float = Field(default=1.0, gt=0.0)
    sigma0: float = Field(default=1.0, gt=0.0)
    M: int = Field(default=200, ge=1)
    seed: int = Field(default=20150601, ge=0, lt=2**64)
    d_mode: Literal["uniform", "stratified"] = "uniform"
    K: int = Field(default=10, ge=3)
    spacing: Literal["equal", "quantile"] = "equal"
    level: float = Field(default=0.95, gt=0.0, lt=1.0)
    sampler: SamplerConfig = SamplerConfig(chains=2, burn_in=1000, iterations=5000)
    intercept_hyper: CommensurateHyper = REGRESSION_SIM_PRESET["intercept"]
    curve_hyper: GmcHyper = REGRESSION_SIM_PRESET["curve"]


@dataclass
class StudyResult:
    table: pd.DataFrame
    records: pd.DataFrame
    failures: List[Dict[str, object]] = field(default_factory=list)


def true_mean(t, d: float = 0.0):
    """(5 + d) t sin((5 + d) t); d = 0 is the primary mean."""
    a = 5.0 + d
    return a * np.asarray(t, dtype=float) * np.sin(a * np.asarray(t, dtype=float))


def generate_pair(d: float, cfg: SimConfig, replicate_seed: int) -> Tuple[RegressionDataset, RegressionDataset]:
    rng = np.random.Generator(np.random.PCG64(replicate_seed))
    t = np.linspace(0.0, 1.0, cfg.N)
    t0 = np.linspace(0.0, 1.0, cfg.N0)
    y = true_mean(t, 0.0) + cfg.sigma * rng.standard_normal(cfg.N)
    y0 = true_mean(t0, d) + cfg.sigma0 * rng.standard_normal(cfg.N0)
    return RegressionDataset.from_arrays(y, t, "primary"), RegressionDataset.from_arrays(y0, t0, "supplemental")


def compute_criteria(fit: CurveSummary, truth: Sequence[float]) -> Dict[str, float]:
    """ME, RMSE, mean credible-interval width and mean pointwise coverage."""
    truth = np.asarray(truth, dtype=float)
    if truth.shape != fit.mean.shape:
        raise DimensionMismatch(f"truth has shape {truth.shape}, fit has {fit.mean.shape}")
    err = fit.mean - truth
    return {
        "me": float(np.mean(err)),
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "criw": float(np.mean(fit.upper - fit.lower)),
        "cp": float(np.mean((truth >= fit.lower) & (truth <= fit.upper))),
    }


def schedule(cfg: SimConfig) -> List[Tuple[int, int, float]]:
    """(replicate index, replicate seed, d) for every replicate."""
    grid = np.asarray(cfg.d_grid, dtype=float)
    if cfg.d_mode == "stratified":
        picks = np.arange(cfg.M) % grid.size
    else:
        picks = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed))).integers(grid.size, size=cfg.M)
    return [(i, derive_seed(cfg.seed, i), float(grid[picks[i]])) for i in range(cfg.M)]


def run_replicate(index: int, seed: int, d: float, cfg: SimConfig) -> List[CriteriaRecord]:
    primary, supplemental = generate_pair(d, cfg, seed)
    partition = build_partition(cfg.K, cfg.spacing, primary.t)
    sampler = cfg.sampler.model_copy(update={"seed": seed, "workers": 1})
    truth = true_mean(primary.t, 0.0)
    spec = GmcRegressionSpec(partition=partition, curve_hyper=cfg.curve_hyper, intercept_hyper=cfg.intercept_hyper)

    fits = {
        "primary_alone": fit_regression_conventional(primary, partition, sampler),
        "pooled": fit_regression_conventional(pool(primary, supplemental), partition, sampler),
        "gmc": fit_regression_gmc(primary, supplemental, spec, sampler),
    }
    records: List[CriteriaRecord] = []
    for estimator, chains in fits.items():
        summary = predict_curve(chains, "primary", primary.t, cfg.level)
        records.append(CriteriaRecord(replicate=index, seed=seed, d=d, estimator=estimator,
                                      **compute_criteria(summary, truth)))
    return records


def _replicate_task(args: Tuple[int, int, float, SimConfig]):
    index, seed, d, cfg = args
    try:
        return index, run_replicate(index, seed, d, cfg), None
    except GmcError as e:
        return index, [], {"replicate": index, "seed": seed, "d": d, "error": f"{type(e).__name__}: {e}"}


def aggregate(records: pd.DataFrame) -> pd.DataFrame:
    """Per-(d, estimator) sampling averages, replicate counts and standard errors."""
    grouped = records.groupby(["d", "estimator"], sort=False)[list(CRITERIA)]
    means = grouped.mean()
    ses = grouped.std(ddof=1) / np.sqrt(grouped.count())
    table = means.join(ses, rsuffix="_se")
    table.insert(0, "n", grouped.size())
    table = table.reset_index()
    order = {name: i for i, name in enumerate(ESTIMATORS)}
    table = table.sort_values(["d", "estimator"], key=lambda s: s.map(order) if s.name == "estimator" else s)
    return table.reset_index(drop=True)


def plot_ready(table: pd.DataFrame) -> pd.DataFrame:
    """Wide layout: one row per d, one ``<criterion>_<estimator>`` column per curve."""
    wide = table.pivot(index="d", columns="estimator", values=list(CRITERIA))
    wide.columns = [f"{criterion}_{estimator}" for criterion, estimator in wide.columns]
    return wide.reset_index()


def run_study(cfg: SimConfig, workers: Optional[int] = None, progress: bool = True) -> StudyResult:
    tasks = [(i, seed, d, cfg) for i, seed, d in schedule(cfg)]
    workers = max(1, min(workers or settings.threads, settings.threads, len(tasks)))
    logger.info("Simulation study: %d replicates (%s d), %d worker(s)", cfg.M, cfg.d_mode, workers)

    results: Dict[int, Tuple[List[CriteriaRecord], Optional[Dict[str, object]]]] = {}
    with tqdm(total=len(tasks), desc="Replicates", unit="rep", disable=not progress) as pbar:
        if workers == 1:
            for task in tasks:
                index, records, failure = _replicate_task(task)
                results[index] = (records, failure)
                pbar.update()
        else:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                futures = [executor.submit(_replicate_task, task) for task in tasks]
                for future in as_completed(futures):
                    index, records, failure = future.result()
                    results[index] = (records, failure)
                    pbar.update()

    rows: List[CriteriaRecord] = []
    failures = []
    for index in sorted(results):
        records, failure = results[index]
        rows += records
        if failure is not None:
            logger.warning("replicate %d (seed %d, d=%g) failed: %s",
                           index, failure["seed"], failure["d"], failure["error"])
            failures.append(failure)

    columns = ["replicate", "seed", "d", "estimator", *CRITERIA]
    record_frame = pd.DataFrame(rows, columns=columns)
    table = aggregate(record_frame) if rows else pd.DataFrame()
    logger.info("Simulation study finished: %d records, %d failed replicate(s)", len(rows), len(failures))
    return StudyResult(table, record_frame, failures)

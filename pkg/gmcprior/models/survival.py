"""Piecewise-exponential proportional-hazards models with right-censoring.

The baseline hazard is exp(gamma_k) on the right-closed interval
(knot_{k-1}, knot_k]; a subject with treatment indicators z has hazard
exp(gamma_k + rho'z). Log-hazards follow a first-order random walk; in the
GMC fit each gamma_k is either tied to its supplemental analog gamma0_k
(spike, precision R_gamma) or follows the random walk (slab).

Likelihoods are evaluated from per-(interval, covariate pattern) event counts
and exposure times, which are exact sufficient statistics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import ForceIndicators, GmcHyper, SamplerConfig, settings
from ..errors import (
    DimensionMismatch,
    DomainError,
    NoEvents,
    OutOfHorizon,
    UnknownCovariateSetting,
    UnknownCurve,
    UnknownTreatment,
)
from ..sampler import (
    BetaBlock,
    Block,
    IndicatorBlock,
    IndicatorJumpBlock,
    MetropolisBlock,
    PosteriorModel,
    SliceBlock,
    State,
    chain_rng,
    coordinate_block,
    fit_dic,
    run_chains,
)
from ..state import ChainSet, CurveSummary, SurvivalDataset
from ..tools.diagnostics import PartitionFit, compare_partitions
from ..tools.gmc_priors import VAGUE_PRECISION, gaussian_logdensity, nu_full_conditional
from ..tools.spline_basis import Partition
from .regression import summarize_curve

logger = logging.getLogger("gmcprior.survival")

SIGMA_BOUNDS = (0.01, 100.0)
DEFAULT_JUMP_SCALE = 0.3
LOG2 = float(np.log(2.0))

CovariateSetting = Union[None, str, Mapping[str, int]]


def rescale_time(times: Sequence[float], horizon: float = settings.horizon_days) -> np.ndarray:
    """Days to the (0, 1] axis by dividing by ``horizon``.

    Raises:
        OutOfHorizon: a time exceeds the horizon (censor administratively first).
    """
    times = np.asarray(times, dtype=float)
    if horizon <= 0.0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    if np.any(times <= 0.0):
        raise DomainError("times must be positive")
    if np.any(times > horizon):
        raise OutOfHorizon(f"{int(np.sum(times > horizon))} time(s) exceed the horizon of {horizon} days")
    return times / horizon


@dataclass(frozen=True)
class PweParams:
    gamma: np.ndarray
    rho: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(rho))):
            raise DomainError("log-hazards and log hazard ratios must be finite")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "rho", rho)


def interval_exposure(time: np.ndarray, p: Partition) -> np.ndarray:
    """n x K matrix of the overlap of (knot_{j-1}, knot_j] with (0, t]."""
    time = np.asarray(time, dtype=float)
    return np.clip(time[:, None] - p.knots[None, :-1], 0.0, np.diff(p.knots)[None, :])


def interval_index(time: np.ndarray, p: Partition) -> np.ndarray:
    """Index of the right-closed interval holding each time (a knot belongs to the earlier interval)."""
    idx = np.searchsorted(p.knots, np.asarray(time, dtype=float), side="left") - 1
    return np.clip(idx, 0, p.K - 1)


@dataclass(frozen=True)
class PweStatistics:
    """Events and exposure per (interval, covariate pattern)."""
    events: np.ndarray      # K x G
    exposure: np.ndarray    # K x G
    patterns: np.ndarray    # G x p

    @classmethod
    def of(cls, data: SurvivalDataset, p: Partition) -> "PweStatistics":
        n, n_cov = data.covariates.shape
        if n_cov and n:
            patterns, group = np.unique(data.covariates, axis=0, return_inverse=True)
            group = np.asarray(group).reshape(-1)
        else:
            patterns, group = np.zeros((1, n_cov)), np.zeros(n, dtype=int)
        exposure = np.zeros((p.K, patterns.shape[0]))
        events = np.zeros_like(exposure)
        if n:
            np.add.at(exposure.T, group, interval_exposure(data.time, p))
            hit = data.event == 1
            np.add.at(events, (interval_index(data.time[hit], p), group[hit]), 1.0)
        return cls(events, exposure, patterns)

    @property
    def K(self) -> int:
        return self.events.shape[0]

    def eta(self, rho: np.ndarray) -> np.ndarray:
        return self.patterns @ rho if self.patterns.shape[1] else np.zeros(self.patterns.shape[0])

    def loglik(self, gamma: np.ndarray, rho: np.ndarray) -> float:
        lin = np.asarray(gamma)[:, None] + self.eta(rho)[None, :]
        return float(np.sum(self.events * lin) - np.sum(np.exp(lin) * self.exposure))

    def interval_loglik(self, k: int, value: float, eta: np.ndarray) -> float:
        return float(np.sum(self.events[k] * (value + eta)) - np.exp(value) * np.sum(np.exp(eta) * self.exposure[k]))

    def crude_log_hazard(self) -> np.ndarray:
        return np.log((self.events.sum(axis=1) + 0.5) / (self.exposure.sum(axis=1) + 1e-3))


def pwe_loglik(params: PweParams, data: SurvivalDataset, p: Partition) -> float:
    """sum_i [c_i (gamma_k(t_i) + rho'z_i) - sum_j exp(gamma_j + rho'z_i) overlap_j(t_i)]."""
    if params.gamma.size != p.K:
        raise DimensionMismatch(f"{params.gamma.size} log-hazards for K={p.K} intervals")
    if params.rho.size != len(data.treatments):
        raise DimensionMismatch(f"{params.rho.size} log hazard ratios for treatments {data.treatments}")
    return PweStatistics.of(data, p).loglik(params.gamma, params.rho)


def _rw_logprior(values: np.ndarray, sigma: float) -> float:
    diffs = np.diff(values)
    return float(-diffs.size * np.log(sigma) - np.sum(diffs ** 2) / (2.0 * sigma ** 2))


def _rw_neighbours(values: np.ndarray, k: int, v: float, sigma: float) -> float:
    """Random-walk terms touching entry k when it takes the value v."""
    out = gaussian_logdensity(v, 0.0, VAGUE_PRECISION) if k == 0 else gaussian_logdensity(
        v, values[k - 1], 1.0 / sigma ** 2)
    if k + 1 < values.size:
        out += gaussian_logdensity(values[k + 1], v, 1.0 / sigma ** 2)
    return out


def _survival_meta(p: Partition, treatments: Sequence[str], kind: str, sources: Dict[str, str]) -> Dict:
    return {"kind": kind, "knots": p.knots.tolist(), "spacing": p.spacing,
            "treatments": list(treatments), "sources": sources}


def _rho_block(stats: PweStatistics, size: int) -> MetropolisBlock:
    def logpost(state: State, j: int, v: float) -> float:
        rho = state["rho"].copy()
        rho[j] = v
        return stats.loglik(state["gamma"], rho) + gaussian_logdensity(v, 0.0, VAGUE_PRECISION)

    return coordinate_block("rho", "rho", size, logpost)


# ---------------------------------------------------------------------------
# Conventional fit
# ---------------------------------------------------------------------------

class ConventionalPwe(PosteriorModel):
    """Random-walk log-hazards, U(0.01, 100) on sigma_gamma, vague N(0, 1e4) on each rho."""

    def __init__(self, data: SurvivalDataset, p: Partition):
        if data.events == 0:
            raise NoEvents("survival data has no observed events")
        self.partition = p
        self.stats = PweStatistics.of(data, p)
        self.n_cov = len(data.treatments)
        self.layout = [("gamma", p.K), ("rho", self.n_cov), ("sigma_gamma", None)]
        self.meta = _survival_meta(p, data.treatments, "pwe", {"primary": "gamma"})

    def _gamma_logpost(self, state: State, k: int, v: float) -> float:
        eta = self.stats.eta(state["rho"])
        return self.stats.interval_loglik(k, v, eta) + _rw_neighbours(state["gamma"], k, v, state["sigma_gamma"])

    def initial_state(self, rng: np.random.Generator) -> State:
        return {
            "gamma": self.stats.crude_log_hazard() + 0.1 * rng.standard_normal(self.partition.K),
            "rho": 0.1 * rng.standard_normal(self.n_cov),
            "sigma_gamma": 0.5,
        }

    def blocks(self) -> List[Block]:
        blocks: List[Block] = [
            coordinate_block("gamma", "gamma", self.partition.K, self._gamma_logpost),
            SliceBlock("sigma_gamma", lambda s, v: _rw_logprior(s["gamma"], v), *SIGMA_BOUNDS),
        ]
        if self.n_cov:
            blocks.append(_rho_block(self.stats, self.n_cov))
        return blocks

    def deviance(self, state: State) -> float:
        return -2.0 * self.stats.loglik(state["gamma"], state["rho"])


def fit_pwe_conventional(data: SurvivalDataset, p: Partition, config: SamplerConfig) -> ChainSet:
    return run_chains(ConventionalPwe(data, p), config)


# ---------------------------------------------------------------------------
# GMC fit
# ---------------------------------------------------------------------------

class GmcPwe(PosteriorModel):
    """Primary log-hazards gamma borrowing from supplemental log-hazards gamma0.

    gamma_k | iota_k = 1 ~ N(gamma0_k, 1/R_gamma); gamma_k | iota_k = 0 follows the
    random walk (vague for k = 0). gamma0 has its own random walk with sigma_gamma0.
    iota_k ~ Bern(nu_gamma), nu_gamma ~ Beta(a1, a2).

    Besides coordinate-wise Metropolis on gamma and gamma0, each sweep shifts
    (gamma_k, gamma0_k) together and proposes indicator flips that move gamma_k
    into (or out of) the spike around gamma0_k.
    """

    def __init__(
        self,
        primary: SurvivalDataset,
        supplemental: SurvivalDataset,
        hyper: GmcHyper,
        p: Partition,
        jump_scale: float = DEFAULT_JUMP_SCALE,
        force_indicators: ForceIndicators = "free",
    ):
        for name, data in (("primary", primary), ("supplemental", supplemental)):
            if data.events == 0:
                raise NoEvents(f"{name} survival data has no observed events")
        if supplemental.covariates.size and np.any(supplemental.covariates != 0):
            raise DomainError("supplemental data must not carry treatment indicators")
        self.partition = p
        self.hyper = hyper
        self.jump_scale = jump_scale
        self.force_indicators = force_indicators
        self.stats = PweStatistics.of(primary, p)
        self.stats0 = PweStatistics.of(supplemental.without_covariates(), p)
        self.n_cov = len(primary.treatments)
        K = p.K
        self.layout = [
            ("gamma", K), ("gamma0", K), ("rho", self.n_cov), ("sigma_gamma", None),
            ("sigma_gamma0", None), ("iota", K), ("nu_gamma", None),
        ]
        self.meta = _survival_meta(p, primary.treatments, "pwe_gmc", {"primary": "gamma", "supplemental": "gamma0"})
        self.meta["R_gamma"] = hyper.R

    def _gamma_prior(self, state: State, k: int, v: float, v0: float, spike: int) -> float:
        if spike:
            return gaussian_logdensity(v, v0, self.hyper.R)
        if k == 0:
            return gaussian_logdensity(v, 0.0, VAGUE_PRECISION)
        return gaussian_logdensity(v, state["gamma"][k - 1], 1.0 / state["sigma_gamma"] ** 2)

    def _local(self, state: State, k: int, v: float, v0: float, iota: np.ndarray) -> float:
        """Every log-posterior term involving gamma_k = v or gamma0_k = v0."""
        gamma, sigma = state["gamma"], state["sigma_gamma"]
        eta = self.stats.eta(state["rho"])
        total = self.stats.interval_loglik(k, v, eta) + self.stats0.interval_loglik(k, v0, np.zeros(1))
        total += self._gamma_prior(state, k, v, v0, iota[k])
        if k + 1 < gamma.size and not iota[k + 1]:
            total += gaussian_logdensity(gamma[k + 1], v, 1.0 / sigma ** 2)
        total += _rw_neighbours(state["gamma0"], k, v0, state["sigma_gamma0"])
        return total

    def _gamma_logpost(self, state: State, k: int, v: float) -> float:
        return self._local(state, k, v, state["gamma0"][k], state["iota"])

    def _gamma0_logpost(self, state: State, k: int, v0: float) -> float:
        return self._local(state, k, state["gamma"][k], v0, state["iota"])

    def _shift_block(self) -> MetropolisBlock:
        def logpost(state: State, k: int, delta: float) -> float:
            return self._local(state, k, state["gamma"][k] + delta, state["gamma0"][k] + delta, state["iota"])

        def put(state: State, k: int, delta: float) -> None:
            state["gamma"][k] += delta
            state["gamma0"][k] += delta

        return MetropolisBlock("shift", self.partition.K, logpost, lambda s, k: 0.0, put, initial_step=0.05)

    def _sigma_gamma_logpost(self, state: State, sigma: float) -> float:
        diffs = np.diff(state["gamma"])[state["iota"][1:] == 0]
        return float(-diffs.size * np.log(sigma) - np.sum(diffs ** 2) / (2.0 * sigma ** 2))

    def _evidence(self, state: State, k: int) -> Tuple[float, float]:
        v, v0 = state["gamma"][k], state["gamma0"][k]
        return self._gamma_prior(state, k, v, v0, 1), self._gamma_prior(state, k, v, v0, 0)

    def _jump(self, state: State, k: int, rng: np.random.Generator) -> Optional[Tuple[float, State]]:
        iota = state["iota"]
        current, v0 = state["gamma"][k], state["gamma0"][k]
        spike_prec, slab_prec = self.hyper.R, 1.0 / self.jump_scale ** 2
        to_spike = iota[k] == 0
        fwd_prec, rev_prec = (spike_prec, slab_prec) if to_spike else (slab_prec, spike_prec)
        proposal = v0 + rng.standard_normal() / np.sqrt(fwd_prec)
        flipped = iota.copy()
        flipped[k] = 1 - iota[k]

        nu = state["nu_gamma"]
        with np.errstate(divide="ignore"):
            log_bern = np.log([1.0 - nu, nu])
        log_ratio = (
            self._local(state, k, proposal, v0, flipped) + log_bern[flipped[k]]
            - self._local(state, k, current, v0, iota) - log_bern[iota[k]]
            + gaussian_logdensity(current, v0, rev_prec) - gaussian_logdensity(proposal, v0, fwd_prec)
        )
        gamma = state["gamma"].copy()
        gamma[k] = proposal
        return float(np.nan_to_num(log_ratio, nan=-np.inf)), {"gamma": gamma, "iota": flipped}

    def initial_state(self, rng: np.random.Generator) -> State:
        K = self.partition.K
        fixed = 1 if self.force_indicators == "all_one" else 0
        gamma0 = self.stats0.crude_log_hazard() + 0.1 * rng.standard_normal(K)
        gamma = self.stats.crude_log_hazard() + 0.1 * rng.standard_normal(K)
        if fixed:
            gamma = gamma0 + rng.standard_normal(K) / np.sqrt(self.hyper.R)
        return {
            "gamma": gamma,
            "gamma0": gamma0,
            "rho": 0.1 * rng.standard_normal(self.n_cov),
            "sigma_gamma": 0.5,
            "sigma_gamma0": 0.5,
            "iota": np.full(K, fixed, dtype=int),
            "nu_gamma": self.hyper.a1 / (self.hyper.a1 + self.hyper.a2),
        }

    def blocks(self) -> List[Block]:
        K = self.partition.K
        blocks: List[Block] = [
            coordinate_block("gamma", "gamma", K, self._gamma_logpost),
            coordinate_block("gamma0", "gamma0", K, self._gamma0_logpost),
            self._shift_block(),
            SliceBlock("sigma_gamma", self._sigma_gamma_logpost, *SIGMA_BOUNDS),
            SliceBlock("sigma_gamma0", lambda s, v: _rw_logprior(s["gamma0"], v), *SIGMA_BOUNDS),
        ]
        if self.force_indicators == "free":
            blocks += [
                IndicatorBlock("iota", self._evidence, lambda s, k: s["nu_gamma"]),
                IndicatorJumpBlock("jump", K, self._jump),
            ]
        blocks.append(BetaBlock("nu_gamma", lambda s: nu_full_conditional(s["iota"], self.hyper)))
        if self.n_cov:
            blocks.append(_rho_block(self.stats, self.n_cov))
        return blocks

    def deviance(self, state: State) -> float:
        return -2.0 * (self.stats.loglik(state["gamma"], state["rho"])
                       + self.stats0.loglik(state["gamma0"], np.zeros(0)))


def fit_pwe_gmc(
    primary: SurvivalDataset,
    supplemental: SurvivalDataset,
    hyper: GmcHyper,
    p: Partition,
    config: SamplerConfig,
    jump_scale: float = DEFAULT_JUMP_SCALE,
    force_indicators: ForceIndicators = "free",
) -> ChainSet:
    """GMC borrowing of the supplemental baseline hazard; exposes ``iota[k]`` and ``nu_gamma``."""
    return run_chains(GmcPwe(primary, supplemental, hyper, p, jump_scale, force_indicators), config)


# ---------------------------------------------------------------------------
# Posterior summaries
# ---------------------------------------------------------------------------

def _partition_of(chains: ChainSet) -> Partition:
    return Partition(np.asarray(chains.meta["knots"], dtype=float), chains.meta.get("spacing", "custom"))


def _covariate_vector(chains: ChainSet, z: CovariateSetting) -> np.ndarray:
    treatments = chains.meta.get("treatments", [])
    vec = np.zeros(len(treatments))
    if z is None or z == "reference":
        return vec
    if isinstance(z, str):
        z = {z: 1}
    for name, value in z.items():
        if name not in treatments or value not in (0, 1):
            raise UnknownCovariateSetting(f"{name}={value} (treatments in fit: {treatments})")
        vec[treatments.index(name)] = value
    return vec


def _rates(chains: ChainSet, z: CovariateSetting, source: str) -> Tuple[Partition, np.ndarray]:
    """Per-draw hazards exp(gamma_k + rho'z), draws x K."""
    sources = chains.meta.get("sources", {})
    if source not in sources:
        raise UnknownCurve(f"no {source!r} hazard in this fit; available: {sorted(sources)}")
    p = _partition_of(chains)
    z_vec = _covariate_vector(chains, z)
    eta = 0.0
    if z_vec.any():
        if source != "primary":
            raise UnknownCovariateSetting("treatment effects apply to the primary source only")
        eta = chains.block("rho", z_vec.size) @ z_vec
    lin = chains.block(sources[source], p.K) + np.asarray(eta).reshape(-1, 1)
    return p, np.exp(lin)


def survival_curve(
    chains: ChainSet, z: CovariateSetting, grid: Sequence[float], level: float = 0.95, source: str = "primary"
) -> CurveSummary:
    """Pointwise posterior mean and interval of S(t | z) = exp(-cumulative hazard)."""
    grid = np.asarray(grid, dtype=float)
    if grid.size and (grid.min() < 0.0 or grid.max() > 1.0):
        raise DomainError("grid must lie in [0, 1]")
    p, rates = _rates(chains, z, source)
    values = np.exp(-(rates @ interval_exposure(grid, p).T))
    return summarize_curve(grid, values, level)


def invert_cumulative_hazard(rates: np.ndarray, p: Partition, target: np.ndarray) -> np.ndarray:
    """Times t with cumulative hazard H(t) = target per row of ``rates``; nan beyond t = 1."""
    rates = np.atleast_2d(rates)
    target = np.broadcast_to(np.asarray(target, dtype=float), rates.shape[:1])
    mass = rates * np.diff(p.knots)[None, :]
    h_end = np.cumsum(mass, axis=1)
    h_start = h_end - mass
    crossing = h_end >= target[:, None]
    reached = crossing.any(axis=1)
    j = np.argmax(crossing, axis=1)
    rows = np.arange(rates.shape[0])
    t = p.knots[j] + (target - h_start[rows, j]) / rates[rows, j]
    return np.where(reached, t, np.nan)


@dataclass(frozen=True)
class MedianSurvival:
    """Posterior mean and equal-tailed interval of median days.

    ``excluded`` counts draws whose median lies beyond the horizon;
    ``censored`` means the posterior mean hazards never reach S = 0.5, in
    which case the median is reported as the horizon itself.
    """
    median_days: float
    lower: float
    upper: float
    excluded: int
    censored: bool


def median_survival(
    chains: ChainSet,
    z: CovariateSetting,
    horizon_days: float = settings.horizon_days,
    level: float = 0.95,
    source: str = "primary",
) -> MedianSurvival:
    p, rates = _rates(chains, z, source)
    mean_rates = np.exp(np.mean(np.log(rates), axis=0, keepdims=True))
    if np.isnan(invert_cumulative_hazard(mean_rates, p, LOG2)[0]):
        logger.info("median survival beyond the horizon for the posterior mean draw")
        return MedianSurvival(horizon_days, horizon_days, horizon_days, rates.shape[0], True)
    t = invert_cumulative_hazard(rates, p, LOG2)
    beyond = np.isnan(t)
    if beyond.any():
        logger.warning("MedianBeyondHorizon: %d of %d draws excluded", int(beyond.sum()), t.size)
    days = t[~beyond] * horizon_days
    if days.size == 0:
        return MedianSurvival(horizon_days, horizon_days, horizon_days, int(beyond.sum()), True)
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(days, [tail, 1.0 - tail], method="linear")
    return MedianSurvival(float(days.mean()), float(lower), float(upper), int(beyond.sum()), False)


def hazard_ratio_summary(chains: ChainSet, which: str, level: float = 0.95) -> Tuple[float, float, float]:
    """Posterior mean and equal-tailed interval of exp(rho) for treatment ``which``."""
    treatments = chains.meta.get("treatments", [])
    if which not in treatments:
        raise UnknownTreatment(f"{which!r} not in {treatments}")
    hr = np.exp(chains.pooled(f"rho[{treatments.index(which)}]"))
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(hr, [tail, 1.0 - tail], method="linear")
    return float(hr.mean()), float(lower), float(upper)


def select_partition_dic(
    primary: SurvivalDataset, candidates: Sequence[Partition], config: SamplerConfig
) -> List[PartitionFit]:
    """Fit the conventional model per candidate partition and rank by DIC."""
    fits = []
    for p in candidates:
        model = ConventionalPwe(primary, p)
        result = fit_dic(run_chains(model, config), model)
        logger.info("partition %s: Dbar=%.3f pD=%.3f DIC=%.3f", p.label, result.dbar, result.pd, result.dic)
        fits.append(PartitionFit(p.label, result.dbar, result.dic, result.pd, p.K, p.spacing))
    return compare_partitions(fits)


def simulate_pwe(
    hazards: Sequence[float],
    p: Partition,
    n: int,
    seed: int,
    source: str = "primary",
    arms: Optional[Mapping[str, float]] = None,
    censor_max: Optional[float] = None,
) -> SurvivalDataset:
    """Synthetic piecewise-exponential data on the (0, 1] axis.

    Subjects are split evenly between the reference arm and each treatment in
    ``arms`` (treatment name -> hazard ratio). Event times beyond 1 are
    censored administratively; ``censor_max`` adds U(0, censor_max) censoring.
    """
    hazards = np.asarray(hazards, dtype=float)
    if hazards.size != p.K:
        raise DimensionMismatch(f"{hazards.size} hazards for K={p.K} intervals")
    rng = chain_rng(seed, 0)
    treatments = tuple(arms or {})
    group = np.arange(n) % (len(treatments) + 1)
    covariates = np.zeros((n, len(treatments)))
    ratio = np.ones(n)
    for j, name in enumerate(treatments):
        covariates[group == j + 1, j] = 1.0
        ratio[group == j + 1] = arms[name]
    event_time = invert_cumulative_hazard(ratio[:, None] * hazards[None, :], p, rng.standard_exponential(n))
    event_time = np.where(np.isnan(event_time), np.inf, event_time)
    censor = np.ones(n) if censor_max is None else np.minimum(rng.uniform(0.0, censor_max, n), 1.0)
    time = np.minimum(event_time, censor)
    time = np.maximum(time, 1e-9)
    return SurvivalDataset(time, (event_time <= censor).astype(int), covariates, treatments, np.full(n, source))

"""Seeded multi-chain Metropolis-within-Gibbs engine.

A model describes its posterior as an ordered list of blocks; one sweep
visits every block once in that order:

* ``GaussianBlock``       conjugate draw of a coefficient vector given (Q, h)
* ``MetropolisBlock``     coordinate-wise adaptive random-walk Metropolis
* ``SliceBlock``          slice sampling of a bounded scalar (standard deviations, tau)
* ``IndicatorBlock``      exact Bernoulli draw of each spike/slab indicator
* ``BetaBlock``           exact Beta draw of a mixing probability
* ``IndicatorJumpBlock``  Metropolis-Hastings move flipping an indicator together
                          with its coefficient

Chains run independently (optionally on a thread pool) and are keyed by index,
so a fit is a pure function of the model and the ``SamplerConfig``.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .config import SamplerConfig, settings
from .errors import (
    BoundsViolation,
    GmcError,
    ModelError,
    NonfiniteDeviance,
    NonfiniteLogPosterior,
    NotPositiveDefinite,
)
from .state import ChainSet
from .tools.diagnostics import DicResult, compute_dic
from .tools.gmc_priors import BetaParams, mixture_indicator_prob

logger = logging.getLogger("gmcprior.sampler")

State = Dict[str, Any]

TARGET_ACCEPT = 0.44


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def chain_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent PCG64 stream ``stream`` derived from ``seed`` via SeedSequence spawn keys."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


def derive_seed(seed: int, stream: int) -> int:
    """64-bit integer seed for stream ``stream`` (distinct streams give distinct seeds)."""
    words = np.random.SeedSequence(seed, spawn_key=(stream,)).generate_state(2, dtype=np.uint32)
    return int(words[0]) << 32 | int(words[1])


# ---------------------------------------------------------------------------
# Single-parameter updates
# ---------------------------------------------------------------------------

@dataclass
class AdaptiveStep:
    """Random-walk proposal scale tuned toward ``target`` acceptance on the log scale.

    The Robbins-Monro gain decays as 1/sqrt(n); ``freeze`` stops adaptation.
    """
    scale: float = 0.1
    target: float = TARGET_ACCEPT
    adapting: bool = True
    n: int = 0

    def update(self, accepted: bool) -> None:
        if not self.adapting:
            return
        self.n += 1
        gain = 1.0 / np.sqrt(self.n)
        self.scale = float(np.exp(np.log(self.scale) + gain * (float(accepted) - self.target)))

    def freeze(self) -> None:
        self.adapting = False


def update_metropolis_scalar(
    current: float,
    logpost: Callable[[float], float],
    step: AdaptiveStep,
    rng: np.random.Generator,
    current_logpost: Optional[float] = None,
) -> Tuple[float, bool]:
    """One symmetric Gaussian random-walk Metropolis step.

    Raises:
        NonfiniteLogPosterior: logpost is not finite at ``current``.
    """
    lp0 = logpost(current) if current_logpost is None else current_logpost
    if not np.isfinite(lp0):
        raise NonfiniteLogPosterior(f"log posterior is {lp0} at current value {current}")
    proposal = current + step.scale * rng.standard_normal()
    delta = logpost(proposal) - lp0
    accepted = bool(delta >= 0.0 or np.log(rng.random()) < delta)
    step.update(accepted)
    return (proposal if accepted else current), accepted


def update_sigma_slice(
    current: float,
    logpost: Callable[[float], float],
    lower: float,
    upper: float,
    rng: np.random.Generator,
    width: float = 1.0,
) -> float:
    """One stepping-out / shrinkage slice-sampling step confined to (lower, upper).

    Raises:
        BoundsViolation: ``current`` is not strictly inside the bounds.
        NonfiniteLogPosterior: logpost is not finite at ``current``.
    """
    if not lower < current < upper:
        raise BoundsViolation(f"slice start {current} outside ({lower}, {upper})")
    lp0 = logpost(current)
    if not np.isfinite(lp0):
        raise NonfiniteLogPosterior(f"log posterior is {lp0} at current value {current}")
    level = lp0 - rng.standard_exponential()

    left = current - width * rng.random()
    right = left + width
    while left > lower and logpost(left) > level:
        left -= width
    while right < upper and logpost(right) > level:
        right += width
    left, right = max(left, lower), min(right, upper)

    while True:
        x = left + (right - left) * rng.random()
        if lower < x < upper and logpost(x) >= level:
            return float(x)
        if x < current:
            left = x
        else:
            right = x


def sample_gaussian_precision(precision: np.ndarray, linear: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(Q^{-1} h, Q^{-1}) through the Cholesky factor of Q."""
    q = np.atleast_2d(np.asarray(precision, dtype=float))
    h = np.atleast_1d(np.asarray(linear, dtype=float))
    if not np.all(np.isfinite(q)):
        raise NotPositiveDefinite("precision matrix has non-finite entries")
    try:
        chol = linalg.cholesky(0.5 * (q + q.T), lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"precision matrix of size {q.shape[0]} is not positive definite") from e
    mean = linalg.cho_solve((chol, True), h)
    z = rng.standard_normal(h.size)
    return mean + linalg.solve_triangular(chol, z, lower=True, trans="T")


def update_gaussian_block(
    prior_mean: np.ndarray,
    prior_precision: np.ndarray,
    obs_precision_terms: Optional[Tuple[np.ndarray, np.ndarray]],
    rng: np.random.Generator,
) -> np.ndarray:
    """Conjugate draw given the prior and the accumulated (X'X / s^2, X'y / s^2) terms.

    ``obs_precision_terms=None`` means no observations: the draw comes from the prior.
    """
    m = np.atleast_1d(np.asarray(prior_mean, dtype=float))
    p = np.atleast_2d(np.asarray(prior_precision, dtype=float))
    q, h = p.copy(), p @ m
    if obs_precision_terms is not None:
        xtx, xty = obs_precision_terms
        q = q + np.atleast_2d(xtx)
        h = h + np.atleast_1d(xty)
    return sample_gaussian_precision(q, h, rng)


def gaussian_log_evidence(prior_logdet: float, precision: np.ndarray, linear: np.ndarray) -> float:
    """log of the Gaussian integral over coefficients, up to terms free of the prior.

    For a zero-mean prior with precision P and a Gaussian likelihood
    contributing (X'X / s^2, X'y / s^2), with Q = P + X'X / s^2 and h = X'y / s^2:
    0.5 log|P| - 0.5 log|Q| + 0.5 h' Q^{-1} h.
    """
    try:
        chol = linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefinite("posterior precision is not positive definite") from e
    white = linalg.solve_triangular(chol, linear, lower=True)
    return float(0.5 * prior_logdet - np.sum(np.log(np.diag(chol))) + 0.5 * white @ white)


# ---------------------------------------------------------------------------
# Block vocabulary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianBlock:
    name: str
    conditional: Callable[[State], Tuple[np.ndarray, np.ndarray]]   # -> (Q, h)
    assign: Callable[[State, np.ndarray], None]


@dataclass(frozen=True)
class MetropolisBlock:
    """Coordinate-wise random walk; ``logpost(state, k, value)`` scores coordinate k at ``value``."""
    name: str
    size: int
    logpost: Callable[[State, int, float], float]
    get: Callable[[State, int], float]
    put: Callable[[State, int, float], None]
    initial_step: float = 0.1


@dataclass(frozen=True)
class SliceBlock:
    name: str   # state key of the scalar
    logpost: Callable[[State, float], float]
    lower: float
    upper: float
    width: float = 1.0


@dataclass(frozen=True)
class IndicatorBlock:
    """Gibbs draw of ``state[name][k]`` from its (log_spike, log_slab) evidence and spike prior."""
    name: str
    evidence: Callable[[State, int], Tuple[float, float]]
    prior_spike: Callable[[State, int], float]
    then: Optional[Callable[[State], None]] = None


@dataclass(frozen=True)
class BetaBlock:
    name: str
    params: Callable[[State], BetaParams]


@dataclass(frozen=True)
class IndicatorJumpBlock:
    """``propose(state, k, rng)`` returns (log acceptance ratio, updated entries) or None to skip."""
    name: str
    size: int
    propose: Callable[[State, int, np.random.Generator], Optional[Tuple[float, State]]]


Block = Union[GaussianBlock, MetropolisBlock, SliceBlock, IndicatorBlock, BetaBlock, IndicatorJumpBlock]


def coordinate_block(
    name: str, key: str, size: int, logpost: Callable[[State, int, float], float], initial_step: float = 0.1
) -> MetropolisBlock:
    """MetropolisBlock over the entries of the 1-d array ``state[key]``."""
    def get(state: State, k: int) -> float:
        return float(state[key][k])

    def put(state: State, k: int, value: float) -> None:
        state[key][k] = value

    return MetropolisBlock(name, size, logpost, get, put, initial_step)


class PosteriorModel(ABC):
    """Interface the engine drives.

    ``layout`` lists (state key, size) pairs in storage order; size None marks
    a scalar. Array entries are stored as ``key[k]``.
    """
    layout: Sequence[Tuple[str, Optional[int]]] = ()
    meta: Dict[str, Any] = {}

    @abstractmethod
    def initial_state(self, rng: np.random.Generator) -> State:
        ...

    @abstractmethod
    def blocks(self) -> List[Block]:
        ...

    @abstractmethod
    def deviance(self, state: State) -> float:
        """-2 x log-likelihood of all data at ``state``."""

    @property
    def names(self) -> List[str]:
        out: List[str] = []
        for key, size in self.layout:
            out += [key] if size is None else [f"{key}[{k}]" for k in range(size)]
        return out

    def flatten(self, state: State) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(state[key], dtype=float)) for key, _ in self.layout])

    def unflatten(self, vector: np.ndarray) -> State:
        state: State = {}
        pos = 0
        for key, size in self.layout:
            if size is None:
                state[key] = float(vector[pos])
                pos += 1
            else:
                state[key] = np.array(vector[pos: pos + size], dtype=float)
                pos += size
        return state


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

@dataclass
class _ChainResult:
    draws: np.ndarray
    deviance: np.ndarray
    accept: Dict[str, float] = field(default_factory=dict)
    steps_burn_in: Dict[str, List[float]] = field(default_factory=dict)
    steps_final: Dict[str, List[float]] = field(default_factory=dict)


class _Sweeper:
    """Per-chain mutable bookkeeping: tuned steps and acceptance counters."""

    def __init__(self, blocks: Sequence[Block], rng: np.random.Generator):
        self.blocks = list(blocks)
        self.rng = rng
        self.steps: Dict[str, List[AdaptiveStep]] = {
            b.name: [AdaptiveStep(b.initial_step) for _ in range(b.size)]
            for b in self.blocks if isinstance(b, MetropolisBlock)
        }
        self.accepted: Dict[str, int] = {}
        self.proposed: Dict[str, int] = {}

    def freeze(self) -> None:
        for steps in self.steps.values():
            for s in steps:
                s.freeze()
        self.accepted.clear()
        self.proposed.clear()

    def step_sizes(self) -> Dict[str, List[float]]:
        return {name: [s.scale for s in steps] for name, steps in self.steps.items()}

    def _count(self, name: str, accepted: bool) -> None:
        self.proposed[name] = self.proposed.get(name, 0) + 1
        self.accepted[name] = self.accepted.get(name, 0) + int(accepted)

    def rates(self) -> Dict[str, float]:
        return {name: self.accepted[name] / n for name, n in self.proposed.items() if n}

    def sweep(self, state: State) -> None:
        for block in self.blocks:
            try:
                self._update(block, state)
            except GmcError:
                raise
            except Exception as e:
                raise ModelError(f"block {block.name!r} failed: {e}") from e

    def _update(self, block: Block, state: State) -> None:
        rng = self.rng
        if isinstance(block, GaussianBlock):
            q, h = block.conditional(state)
            block.assign(state, sample_gaussian_precision(q, h, rng))
        elif isinstance(block, MetropolisBlock):
            for k, step in enumerate(self.steps[block.name]):
                value, accepted = update_metropolis_scalar(
                    block.get(state, k), lambda v: block.logpost(state, k, v), step, rng
                )
                block.put(state, k, value)
                self._count(block.name, accepted)
        elif isinstance(block, SliceBlock):
            state[block.name] = update_sigma_slice(
                state[block.name], lambda v: block.logpost(state, v), block.lower, block.upper, rng, block.width
            )
        elif isinstance(block, IndicatorBlock):
            iota = state[block.name]
            for k in range(iota.size):
                log_spike, log_slab = block.evidence(state, k)
                prob = mixture_indicator_prob(log_spike, log_slab, block.prior_spike(state, k))
                iota[k] = int(rng.random() < prob)
            if block.then is not None:
                block.then(state)
        elif isinstance(block, BetaBlock):
            a, b = block.params(state)
            state[block.name] = float(rng.beta(a, b))
        elif isinstance(block, IndicatorJumpBlock):
            for k in range(block.size):
                move = block.propose(state, k, rng)
                if move is None:
                    continue
                log_ratio, update = move
                accepted = bool(log_ratio >= 0.0 or np.log(rng.random()) < log_ratio)
                if accepted:
                    state.update(update)
                self._count(block.name, accepted)
        else:
            raise ModelError(f"unknown block type {type(block).__name__}")


def _run_chain(model: PosteriorModel, config: SamplerConfig, chain: int) -> _ChainResult:
    rng = chain_rng(config.seed, chain)
    state = model.initial_state(rng)
    sweeper = _Sweeper(model.blocks(), rng)
    n_par = len(model.names)
    draws = np.empty((config.stored, n_par))
    deviance = np.empty(config.stored)
    steps_burn_in: Dict[str, List[float]] = {}

    stored = 0
    for it in range(config.burn_in + config.iterations):
        if it == config.burn_in:
            sweeper.freeze()
            steps_burn_in = sweeper.step_sizes()
            logger.debug("chain %d: adaptation frozen at %s", chain, steps_burn_in)
        sweeper.sweep(state)
        kept = it - config.burn_in
        if kept >= 0 and kept % config.thin == config.thin - 1 and stored < config.stored:
            dev = model.deviance(state)
            if not np.isfinite(dev):
                raise NonfiniteDeviance(f"deviance is {dev} in chain {chain} at iteration {it}")
            draws[stored] = model.flatten(state)
            deviance[stored] = dev
            stored += 1

    return _ChainResult(draws, deviance, sweeper.rates(), steps_burn_in, sweeper.step_sizes())


def run_chains(model: PosteriorModel, config: SamplerConfig) -> ChainSet:
    """Run ``config.chains`` independent chains and collect them into a ChainSet."""
    workers = max(1, min(config.workers or settings.threads, config.chains))
    logger.info(
        "Sampling %s: %d parameters, %d chains x (%d burn-in + %d iterations, thin %d), %d worker(s)",
        type(model).__name__, len(model.names), config.chains, config.burn_in, config.iterations,
        config.thin, workers,
    )
    run_one = partial(_run_chain, model, config)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, range(config.chains)))
    else:
        results = [run_one(c) for c in range(config.chains)]

    block_names = sorted({name for r in results for name in r.accept})
    accept_rates = {name: [r.accept.get(name, float("nan")) for r in results] for name in block_names}
    for name, rates in accept_rates.items():
        logger.info("  acceptance %-14s %s", name, " ".join(f"{x:.3f}" for x in rates))

    meta = dict(model.meta)
    meta["step_sizes_burn_in"] = [r.steps_burn_in for r in results]
    meta["step_sizes_final"] = [r.steps_final for r in results]
    return ChainSet(
        names=model.names,
        draws=np.stack([r.draws for r in results]),
        deviance=np.stack([r.deviance for r in results]),
        meta=meta,
        accept_rates=accept_rates,
    )


def posterior_mean_state(chains: ChainSet, model: PosteriorModel) -> State:
    return model.unflatten(chains.draws.reshape(-1, len(chains.names)).mean(axis=0))


def fit_dic(chains: ChainSet, model: PosteriorModel) -> DicResult:
    """DIC of a fit, with the deviance evaluated at the posterior mean of every stored parameter."""
    return compute_dic(chains.deviance, model.deviance(posterior_mean_state(chains, model)))

"""Gaussian nonparametric regression posteriors on the mLRTP spline basis.

Three fits share the b-space parameterization (intercept, slope, Omega^{1/2}
times the radial coefficients):

* ``fit_regression_conventional``  one curve, vague intercept/slope, N(0, sigma_b^2) radials
* ``fit_regression_gmc``           primary curve b borrowing from supplemental curve b0
                                   through a commensurate intercept prior and a GMC shape prior
* ``fit_ctp_gmc``                  per-tissue average curves plus per-individual
                                   deviation curves for perfusion (CTp) data

In the two-curve fits the coefficient vectors (b, b0) are drawn jointly; the
spike/slab indicators are drawn either with (b, b0) and nu integrated out
("collapsed", default) or from their full conditional ("conditional").
"""

from __future__ import annotations

import logging
from abc import abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from ..config import (
    REGRESSION_SIM_PRESET,
    CommensurateHyper,
    ForceIndicators,
    GmcHyper,
    IndicatorMode,
    SamplerConfig,
)
from ..errors import DomainError, MissingHierarchy, UnknownCurve
from ..sampler import (
    BetaBlock,
    Block,
    GaussianBlock,
    IndicatorBlock,
    PosteriorModel,
    SliceBlock,
    State,
    fit_dic,
    gaussian_log_evidence,
    run_chains,
    sample_gaussian_precision,
)
from ..state import TISSUES, ChainSet, CurveSummary, RegressionDataset
from ..tools.diagnostics import PartitionFit, compare_partitions
from ..tools.gmc_priors import (
    VAGUE_PRECISION,
    beta_bernoulli_prior_spike,
    gaussian_logdensity,
    nu_full_conditional,
)
from ..tools.spline_basis import (
    Partition,
    derivative_matrix,
    design_matrix,
    omega_factor,
    transformed_design,
)

logger = logging.getLogger("gmcprior.regression")

SIGMA_BOUNDS = (0.01, 100.0)
GUARD_FRACTION = 0.25


class GmcRegressionSpec(BaseModel):
    """Prior setup of a two-curve GMC fit.

    Attributes:
        partition: knots shared by the primary and supplemental curves
        curve_hyper: spike precision R_b and Beta(a1, a2) prior on nu
        intercept_hyper: commensurate prior (s_l, s_u, R, p0) tying the intercepts
        force_indicators: "all_zero" / "all_one" pin every indicator
        indicator_update: "collapsed" or "conditional" indicator draws
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    partition: Partition
    curve_hyper: GmcHyper = REGRESSION_SIM_PRESET["curve"]
    intercept_hyper: CommensurateHyper = REGRESSION_SIM_PRESET["intercept"]
    force_indicators: ForceIndicators = "free"
    indicator_update: IndicatorMode = "collapsed"


@dataclass(frozen=True)
class _Gram:
    """Sufficient statistics of y ~ N(X theta, s^2)."""
    xtx: np.ndarray
    xty: np.ndarray
    yty: float
    n: int

    @classmethod
    def of(cls, x: np.ndarray, y: np.ndarray) -> "_Gram":
        return cls(x.T @ x, x.T @ y, float(y @ y), int(y.size))

    def rss(self, theta: np.ndarray) -> float:
        return max(float(self.yty - 2.0 * theta @ self.xty + theta @ self.xtx @ theta), 0.0)


def _gaussian_deviance(n: int, rss: float, sigma: float) -> float:
    return n * np.log(2.0 * np.pi * sigma ** 2) + rss / sigma ** 2


def _sigma_logpost(n: int, rss: float) -> Callable[[float], float]:
    return lambda s: -n * np.log(s) - rss / (2.0 * s ** 2)


def _radial_logpost(values: np.ndarray) -> Callable[[float], float]:
    ss = float(np.sum(values ** 2))
    return lambda s: -values.size * np.log(s) - ss / (2.0 * s ** 2)


def _initial_sigma(y: np.ndarray) -> float:
    return float(np.clip(np.std(y), 0.05, 50.0))


def _curve_meta(p: Partition, curves: Dict[str, Dict[str, str]], kind: str) -> Dict:
    return {"kind": kind, "knots": p.knots.tolist(), "spacing": p.spacing, "curves": curves}


# ---------------------------------------------------------------------------
# Conventional single-curve fit
# ---------------------------------------------------------------------------

class ConventionalRegression(PosteriorModel):
    """y ~ N(phi(t), sigma^2) with vague (b_0, b_1), b_k ~ N(0, sigma_b^2), U(0.01, 100) scales."""

    def __init__(self, data: RegressionDataset, partition: Partition):
        self.partition = partition
        self.factor = omega_factor(partition)
        self.K1 = partition.K + 1
        self.y = data.y
        self.gram = _Gram.of(transformed_design(data.t, partition, self.factor), data.y)
        self.layout = [("b", self.K1), ("sigma_b", None), ("sigma", None)]
        self.meta = _curve_meta(partition, {"primary": {"prefix": "b", "space": "b"}}, "regression")
        if len(data) < partition.K + 2:
            logger.warning("only %d observations for %s; at least K+2=%d recommended",
                           len(data), partition.label, partition.K + 2)

    def _coefficient_conditional(self, state: State) -> Tuple[np.ndarray, np.ndarray]:
        prior = np.full(self.K1, 1.0 / state["sigma_b"] ** 2)
        prior[:2] = VAGUE_PRECISION
        s2 = state["sigma"] ** 2
        return np.diag(prior) + self.gram.xtx / s2, self.gram.xty / s2

    def initial_state(self, rng: np.random.Generator) -> State:
        state: State = {"sigma_b": 1.0, "sigma": _initial_sigma(self.y)}
        state["b"] = sample_gaussian_precision(*self._coefficient_conditional(state), rng)
        return state

    def blocks(self) -> List[Block]:
        def assign(state: State, theta: np.ndarray) -> None:
            state["b"] = theta

        return [
            GaussianBlock("b", self._coefficient_conditional, assign),
            SliceBlock("sigma_b", lambda s, v: _radial_logpost(s["b"][2:])(v), *SIGMA_BOUNDS),
            SliceBlock("sigma", lambda s, v: _sigma_logpost(self.gram.n, self.gram.rss(s["b"]))(v), *SIGMA_BOUNDS),
        ]

    def deviance(self, state: State) -> float:
        return _gaussian_deviance(self.gram.n, self.gram.rss(state["b"]), state["sigma"])


def fit_regression_conventional(data: RegressionDataset, partition: Partition, config: SamplerConfig) -> ChainSet:
    """Conventional penalized-spline fit to one source (or to pooled data)."""
    if len(data) == 0:
        raise DomainError("regression data is empty")
    return run_chains(ConventionalRegression(data, partition), config)


# ---------------------------------------------------------------------------
# Shared two-curve GMC machinery
# ---------------------------------------------------------------------------

def _joint_precision(p: np.ndarray, c: np.ndarray, d0: np.ndarray) -> Tuple[np.ndarray, float]:
    """Precision of (b, b0) for b_k | b0_k ~ N(c_k b0_k, 1/p_k), b0_k ~ N(0, 1/d0_k)."""
    k1 = p.size
    prec = np.zeros((2 * k1, 2 * k1))
    idx = np.arange(k1)
    prec[idx, idx] = p
    prec[idx, idx + k1] = prec[idx + k1, idx] = -c * p
    prec[idx + k1, idx + k1] = c * p + d0
    return prec, float(np.sum(np.log(p)) + np.sum(np.log(d0)))


class _TwoCurveModel(PosteriorModel):
    """Joint GMC posterior of a primary curve and its supplemental analog.

    Subclasses provide the likelihood side through ``_likelihood_terms`` and
    their own data/noise blocks; this class owns the prior coupling, the
    indicators, nu, tau and the two sigma_b slices.
    """
    b_key = "b"
    b0_key = "b0"
    sb_key = "sigma_b"
    sb0_key = "sigma_b0"

    def __init__(self, spec: GmcRegressionSpec):
        self.spec = spec
        self.partition = spec.partition
        self.factor = omega_factor(spec.partition)
        self.K1 = spec.partition.K + 1

    # -- likelihood side -------------------------------------------------
    @abstractmethod
    def _likelihood_terms(self, state: State) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(X'X / s^2, X0'X0 / s0^2, X'r / s^2, X0'r0 / s0^2) for the current residual targets."""

    def _data_blocks(self) -> List[Block]:
        return []

    def _noise_blocks(self) -> List[Block]:
        return []

    # -- prior side ------------------------------------------------------
    def _prior_terms(self, state: State, iota: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        spike = iota.astype(bool)
        R_int, R_b = self.spec.intercept_hyper.R, self.spec.curve_hyper.R
        slab = np.full(self.K1, 1.0 / state[self.sb_key] ** 2)
        slab[1] = VAGUE_PRECISION
        p = np.where(spike, R_b, slab)
        p[0] = R_int if spike[0] else state["tau"]
        c = spike.astype(float)
        c[0] = 1.0
        d0 = np.full(self.K1, 1.0 / state[self.sb0_key] ** 2)
        d0[:2] = VAGUE_PRECISION
        return p, c, d0

    def _system(self, state: State, iota: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        prec, logdet = _joint_precision(*self._prior_terms(state, iota))
        g, g0, h, h0 = self._likelihood_terms(state)
        k1 = self.K1
        prec[:k1, :k1] += g
        prec[k1:, k1:] += g0
        return prec, np.concatenate([h, h0]), logdet

    def _coefficient_conditional(self, state: State) -> Tuple[np.ndarray, np.ndarray]:
        prec, linear, _ = self._system(state, state["iota"])
        return prec, linear

    def _assign(self, state: State, theta: np.ndarray) -> None:
        state[self.b_key] = theta[: self.K1]
        state[self.b0_key] = theta[self.K1:]

    # -- indicators ------------------------------------------------------
    def _collapsed_evidence(self, state: State, k: int) -> Tuple[float, float]:
        out = []
        for value in (1, 0):
            trial = state["iota"].copy()
            trial[k] = value
            prec, linear, logdet = self._system(state, trial)
            out.append(gaussian_log_evidence(logdet, prec, linear))
        return out[0], out[1]

    def _conditional_evidence(self, state: State, k: int) -> Tuple[float, float]:
        b, b0 = state[self.b_key][k], state[self.b0_key][k]
        if k == 0:
            return (gaussian_logdensity(b, b0, self.spec.intercept_hyper.R),
                    gaussian_logdensity(b, b0, state["tau"]))
        slab = VAGUE_PRECISION if k == 1 else 1.0 / state[self.sb_key] ** 2
        return gaussian_logdensity(b, b0, self.spec.curve_hyper.R), gaussian_logdensity(b, 0.0, slab)

    def _prior_spike(self, state: State, k: int) -> float:
        if k == 0:
            return self.spec.intercept_hyper.p0
        if self.spec.indicator_update == "collapsed":
            return beta_bernoulli_prior_spike(state["iota"][1:], k - 1, self.spec.curve_hyper)
        return state["nu"]

    def _initial_indicators(self) -> np.ndarray:
        value = 1 if self.spec.force_indicators == "all_one" else 0
        return np.full(self.K1, value, dtype=int)

    def _initial_prior_state(self) -> State:
        hyper = self.spec.curve_hyper
        return {
            "iota": self._initial_indicators(),
            "nu": hyper.a1 / (hyper.a1 + hyper.a2),
            "tau": 0.5 * (self.spec.intercept_hyper.s_l + self.spec.intercept_hyper.s_u),
            self.sb_key: 1.0,
            self.sb0_key: 1.0,
        }

    def _tau_logpost(self, state: State, tau: float) -> float:
        if tau <= 0.0:
            return -np.inf
        if state["iota"][0] == 1:
            return 0.0
        return gaussian_logdensity(state[self.b_key][0], state[self.b0_key][0], tau)

    def blocks(self) -> List[Block]:
        spec = self.spec
        indicators = IndicatorBlock(
            "iota",
            self._collapsed_evidence if spec.indicator_update == "collapsed" else self._conditional_evidence,
            self._prior_spike,
        )
        nu = BetaBlock("nu", lambda s: nu_full_conditional(s["iota"][1:], spec.curve_hyper))
        coefficients = GaussianBlock("coefficients", self._coefficient_conditional, self._assign)
        scales = [
            SliceBlock("tau", self._tau_logpost, spec.intercept_hyper.s_l, spec.intercept_hyper.s_u, width=0.5),
            SliceBlock(self.sb_key, lambda s, v: _radial_logpost(
                s[self.b_key][2:][s["iota"][2:] == 0])(v), *SIGMA_BOUNDS),
            SliceBlock(self.sb0_key, lambda s, v: _radial_logpost(s[self.b0_key][2:])(v), *SIGMA_BOUNDS),
        ]
        middle = [coefficients, *self._data_blocks(), *scales, *self._noise_blocks()]
        if spec.force_indicators != "free":
            return [*middle, nu]
        if spec.indicator_update == "collapsed":
            return [indicators, nu, *middle]
        return [*middle, indicators, nu]


# ---------------------------------------------------------------------------
# Two-source GMC fit
# ---------------------------------------------------------------------------

class GmcRegression(_TwoCurveModel):
    """Primary curve b and supplemental curve b0, each with its own error sigma."""

    def __init__(self, primary: RegressionDataset, supplemental: RegressionDataset, spec: GmcRegressionSpec):
        super().__init__(spec)
        self.y, self.y0 = primary.y, supplemental.y
        self.gram = _Gram.of(transformed_design(primary.t, self.partition, self.factor), primary.y)
        self.gram0 = _Gram.of(transformed_design(supplemental.t, self.partition, self.factor), supplemental.y)
        self.layout = [
            ("b", self.K1), ("b0", self.K1), ("sigma_b", None), ("sigma_b0", None),
            ("sigma", None), ("sigma0", None), ("tau", None), ("iota", self.K1), ("nu", None),
        ]
        curves = {"primary": {"prefix": "b", "space": "b"}, "supplemental": {"prefix": "b0", "space": "b"}}
        self.meta = _curve_meta(self.partition, curves, "regression_gmc")

    def _likelihood_terms(self, state: State):
        s2, s02 = state["sigma"] ** 2, state["sigma0"] ** 2
        return self.gram.xtx / s2, self.gram0.xtx / s02, self.gram.xty / s2, self.gram0.xty / s02

    def _noise_blocks(self) -> List[Block]:
        return [
            SliceBlock("sigma", lambda s, v: _sigma_logpost(self.gram.n, self.gram.rss(s["b"]))(v), *SIGMA_BOUNDS),
            SliceBlock("sigma0", lambda s, v: _sigma_logpost(self.gram0.n, self.gram0.rss(s["b0"]))(v),
                       *SIGMA_BOUNDS),
        ]

    def initial_state(self, rng: np.random.Generator) -> State:
        state = self._initial_prior_state()
        state["sigma"], state["sigma0"] = _initial_sigma(self.y), _initial_sigma(self.y0)
        self._assign(state, sample_gaussian_precision(*self._coefficient_conditional(state), rng))
        return state

    def deviance(self, state: State) -> float:
        return (_gaussian_deviance(self.gram.n, self.gram.rss(state["b"]), state["sigma"])
                + _gaussian_deviance(self.gram0.n, self.gram0.rss(state["b0"]), state["sigma0"]))


def fit_regression_gmc(
    primary: RegressionDataset, supplemental: RegressionDataset, spec: GmcRegressionSpec, config: SamplerConfig
) -> ChainSet:
    """Two-source fit; the chains expose ``iota[0]`` (intercept), ``iota[1..K]`` (shape) and ``nu``."""
    if len(primary) == 0 or len(supplemental) == 0:
        raise DomainError("both primary and supplemental data must be nonempty")
    return run_chains(GmcRegression(primary, supplemental, spec), config)


# ---------------------------------------------------------------------------
# Hierarchical CTp fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Group:
    """Rows of one (tissue, individual) pair; theta = (b_tissue, alpha_group)."""
    tissue: str
    individual: int
    xtx: np.ndarray
    ztz: np.ndarray
    xtz: np.ndarray
    xty: np.ndarray
    zty: np.ndarray
    yty: float
    n: int

    @property
    def key(self) -> str:
        return f"{self.tissue}_{self.individual}"

    def rss(self, b: np.ndarray, alpha: np.ndarray) -> float:
        fitted = (b @ self.xtx @ b + 2.0 * b @ self.xtz @ alpha + alpha @ self.ztz @ alpha)
        return max(float(self.yty - 2.0 * (b @ self.xty + alpha @ self.zty) + fitted), 0.0)


class CtpGmc(_TwoCurveModel):
    """y = phi_tissue(t) + psi_(tissue, individual)(t) + N(0, sigma_e_tissue^2).

    The cancerous average curve plays the primary role (``b_cancerous``) and
    the noncancerous curve the supplemental role (``b_noncancerous``).
    Deviation coefficients alpha are kept on the raw basis with
    alpha_k ~ N(0, sigma_a^2), one sigma_a per (tissue, individual).
    """
    b_key = "b_cancerous"
    b0_key = "b_noncancerous"
    sb_key = "sigma_b_cancerous"
    sb0_key = "sigma_b_noncancerous"

    def __init__(self, data: RegressionDataset, spec: GmcRegressionSpec):
        super().__init__(spec)
        if not data.has_hierarchy:
            raise MissingHierarchy("CTp fits need individual, region and tissue labels")
        for tissue in TISSUES:
            if not np.any(data.tissue == tissue):
                raise MissingHierarchy(f"no {tissue} rows in CTp data")
        x = transformed_design(data.t, self.partition, self.factor)
        z = design_matrix(data.t, self.partition)
        self.groups: List[_Group] = []
        for tissue in TISSUES:
            for ind in np.unique(data.individual[data.tissue == tissue]):
                rows = (data.tissue == tissue) & (data.individual == ind)
                xg, zg, yg = x[rows], z[rows], data.y[rows]
                self.groups.append(_Group(tissue, int(ind), xg.T @ xg, zg.T @ zg, xg.T @ zg,
                                          xg.T @ yg, zg.T @ yg, float(yg @ yg), int(yg.size)))
        self.sd = {tissue: _initial_sigma(data.y[data.tissue == tissue]) for tissue in TISSUES}
        self.tissue_xtx = {t: sum(g.xtx for g in self.groups if g.tissue == t) for t in TISSUES}

        self.layout = (
            [(self.b_key, self.K1), (self.b0_key, self.K1)]
            + [(f"alpha_{g.key}", self.K1) for g in self.groups]
            + [(self.sb_key, None), (self.sb0_key, None)]
            + [(f"sigma_a_{g.key}", None) for g in self.groups]
            + [("sigma_e_cancerous", None), ("sigma_e_noncancerous", None),
               ("tau", None), ("iota", self.K1), ("nu", None)]
        )
        curves = {
            "cancerous": {"prefix": self.b_key, "space": "b"},
            "noncancerous": {"prefix": self.b0_key, "space": "b"},
        }
        for g in self.groups:
            curves[f"deviation:{g.tissue}:{g.individual}"] = {"prefix": f"alpha_{g.key}", "space": "beta"}
        self.meta = _curve_meta(self.partition, curves, "ctp_gmc")
        self.meta["groups"] = [[g.tissue, g.individual] for g in self.groups]

    def _curve_key(self, tissue: str) -> str:
        return self.b_key if tissue == "cancerous" else self.b0_key

    def _likelihood_terms(self, state: State):
        s2 = {t: state[f"sigma_e_{t}"] ** 2 for t in TISSUES}
        h = {t: np.zeros(self.K1) for t in TISSUES}
        for g in self.groups:
            h[g.tissue] += g.xty - g.xtz @ state[f"alpha_{g.key}"]
        c, n = TISSUES
        return (self.tissue_xtx[c] / s2[c], self.tissue_xtx[n] / s2[n], h[c] / s2[c], h[n] / s2[n])

    def _alpha_block(self, g: _Group) -> GaussianBlock:
        key = f"alpha_{g.key}"

        def conditional(state: State) -> Tuple[np.ndarray, np.ndarray]:
            s2 = state[f"sigma_e_{g.tissue}"] ** 2
            b = state[self._curve_key(g.tissue)]
            prec = np.eye(self.K1) / state[f"sigma_a_{g.key}"] ** 2 + g.ztz / s2
            return prec, (g.zty - g.xtz.T @ b) / s2

        def assign(state: State, alpha: np.ndarray) -> None:
            state[key] = alpha

        return GaussianBlock(key, conditional, assign)

    def _data_blocks(self) -> List[Block]:
        return [self._alpha_block(g) for g in self.groups]

    def _tissue_rss(self, state: State, tissue: str) -> Tuple[int, float]:
        b = state[self._curve_key(tissue)]
        members = [g for g in self.groups if g.tissue == tissue]
        return (sum(g.n for g in members), sum(g.rss(b, state[f"alpha_{g.key}"]) for g in members))

    def _noise_blocks(self) -> List[Block]:
        blocks: List[Block] = [
            SliceBlock(f"sigma_a_{g.key}",
                       lambda s, v, key=g.key: _radial_logpost(s[f"alpha_{key}"])(v), *SIGMA_BOUNDS)
            for g in self.groups
        ]
        for tissue in TISSUES:
            blocks.append(SliceBlock(
                f"sigma_e_{tissue}",
                lambda s, v, tissue=tissue: _sigma_logpost(*self._tissue_rss(s, tissue))(v),
                *SIGMA_BOUNDS,
            ))
        return blocks

    def initial_state(self, rng: np.random.Generator) -> State:
        state = self._initial_prior_state()
        for tissue in TISSUES:
            state[f"sigma_e_{tissue}"] = self.sd[tissue]
        for g in self.groups:
            state[f"alpha_{g.key}"] = np.zeros(self.K1)
            state[f"sigma_a_{g.key}"] = 0.5
        self._assign(state, sample_gaussian_precision(*self._coefficient_conditional(state), rng))
        return state

    def deviance(self, state: State) -> float:
        total = 0.0
        for g in self.groups:
            rss = g.rss(state[self._curve_key(g.tissue)], state[f"alpha_{g.key}"])
            total += _gaussian_deviance(g.n, rss, state[f"sigma_e_{g.tissue}"])
        return total


def fit_ctp_gmc(data: RegressionDataset, spec: GmcRegressionSpec, config: SamplerConfig) -> ChainSet:
    """Hierarchical CTp fit; ``force_indicators="all_zero"`` gives the conventional (no-borrowing) analysis."""
    return run_chains(CtpGmc(data, spec), config)


# ---------------------------------------------------------------------------
# Curve prediction and reporting
# ---------------------------------------------------------------------------

def _partition_of(chains: ChainSet) -> Partition:
    return Partition(np.asarray(chains.meta["knots"], dtype=float), chains.meta.get("spacing", "custom"))


def _curve_coefficients(chains: ChainSet, which: str) -> Tuple[Partition, np.ndarray]:
    """Per-draw raw-basis coefficients (draws x (K+1)) of the selected curve."""
    curves = chains.meta.get("curves", {})
    if which not in curves:
        raise UnknownCurve(f"unknown curve {which!r}; available: {sorted(curves)}")
    entry = curves[which]
    partition = _partition_of(chains)
    coef = chains.block(entry["prefix"], partition.K + 1)
    if entry["space"] == "b":
        coef = np.column_stack([coef[:, :2], coef[:, 2:] @ omega_factor(partition).inv_sqrt.T])
    return partition, coef


def summarize_curve(grid: np.ndarray, values: np.ndarray, level: float) -> CurveSummary:
    """Pointwise mean and equal-tailed ``level`` interval of per-draw curve values (draws x grid)."""
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(values, [tail, 1.0 - tail], axis=0, method="linear")
    return CurveSummary(np.asarray(grid, dtype=float), values.mean(axis=0), lower, upper, level)


def predict_curve(chains: ChainSet, which: str, grid: Sequence[float], level: float = 0.95) -> CurveSummary:
    partition, coef = _curve_coefficients(chains, which)
    grid = np.asarray(grid, dtype=float)
    return summarize_curve(grid, coef @ design_matrix(grid, partition).T, level)


def predict_derivative(chains: ChainSet, which: str, grid: Sequence[float], level: float = 0.95) -> CurveSummary:
    partition, coef = _curve_coefficients(chains, which)
    grid = np.asarray(grid, dtype=float)
    return summarize_curve(grid, coef @ derivative_matrix(grid, partition).T, level)


def compare_interval_widths(reference: CurveSummary, other: CurveSummary) -> float:
    """Relative change of mean pointwise interval width, (other - reference) / reference."""
    return (other.width - reference.width) / reference.width


def select_regression_partition_dic(
    data: RegressionDataset, candidates: Sequence[Partition], config: SamplerConfig
) -> List[PartitionFit]:
    """Fit the conventional spline per candidate partition and rank by DIC."""
    fits = []
    for p in candidates:
        model = ConventionalRegression(data, p)
        result = fit_dic(run_chains(model, config), model)
        logger.info("partition %s: Dbar=%.3f pD=%.3f DIC=%.3f", p.label, result.dbar, result.pd, result.dic)
        fits.append(PartitionFit(p.label, result.dbar, result.dic, result.pd, p.K, p.spacing))
    return compare_partitions(fits)


def deviation_guard(chains: ChainSet, grid: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """Sum of posterior mean deviation curves per tissue against the average-curve range.

    A tissue is flagged when the summed deviations reach 25% of the range of
    its posterior mean average curve.
    """
    grid = np.linspace(0.0, 1.0, 21) if grid is None else np.asarray(grid, dtype=float)
    rows = []
    for tissue in TISSUES:
        members = [ind for t, ind in chains.meta.get("groups", []) if t == tissue]
        if not members:
            continue
        total = sum(predict_curve(chains, f"deviation:{tissue}:{ind}", grid).mean for ind in members)
        average = predict_curve(chains, tissue, grid).mean
        max_abs, span = float(np.max(np.abs(total))), float(np.ptp(average))
        flagged = max_abs > GUARD_FRACTION * span
        if flagged:
            logger.warning("deviation curves for %s tissue sum to %.3g (average-curve range %.3g)",
                           tissue, max_abs, span)
        rows.append({"tissue": tissue, "max_abs_sum": max_abs, "average_range": span, "flagged": flagged})
    return pd.DataFrame(rows)

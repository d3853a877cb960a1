"""Log-densities and exact full-conditional pieces for commensurate priors.

Three prior families are covered:

* the spike-and-slab commensurate prior for a single parameter theta given
  its supplemental analog theta0: theta ~ N(theta0, 1/R) with probability p0
  (spike) and N(theta0, 1/tau), tau ~ U(s_l, s_u), otherwise (slab);
* the generalized mixture commensurate (GMC) prior, a product of K
  spike/slab mixtures whose indicators share one probability nu ~ Beta(a1, a2);
* the first-order random-walk process for piecewise log-hazards.

Integrating tau out of the slab recovers the mixture form with a uniform slab
on the precision and a point mass at R.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from ..config import CommensurateHyper, GmcHyper
from ..errors import DimensionMismatch, NonpositivePrecision, NonpositiveSigma, TauOutOfSlab

# N(0, 10^4) everywhere a vague Gaussian prior is used
VAGUE_PRECISION = 1e-4

_LOG_2PI = np.log(2.0 * np.pi)


class BetaParams(NamedTuple):
    a: float
    b: float


@dataclass(frozen=True)
class IndicatorState:
    iota: np.ndarray
    nu: float

    def __post_init__(self):
        iota = np.asarray(self.iota).astype(int)
        if not np.isin(iota, (0, 1)).all():
            raise ValueError("iota entries must be 0 or 1")
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError(f"nu must lie in [0, 1], got {self.nu}")
        object.__setattr__(self, "iota", iota)


def gaussian_logdensity(x, mean, precision):
    """log N(x | mean, 1/precision); broadcasts over arrays."""
    precision = np.asarray(precision, dtype=float)
    if np.any(precision <= 0.0):
        raise NonpositivePrecision(f"precision must be positive, got {precision}")
    out = 0.5 * (np.log(precision) - _LOG_2PI) - 0.5 * precision * (np.asarray(x) - np.asarray(mean)) ** 2
    return float(out) if np.ndim(out) == 0 else out


def spike_slab_logprior(theta: float, theta0: float, tau: float, iota: int, hyper: CommensurateHyper) -> float:
    if iota == 1:
        return gaussian_logdensity(theta, theta0, hyper.R)
    if not hyper.s_l <= tau <= hyper.s_u:
        raise TauOutOfSlab(f"tau={tau} outside slab [{hyper.s_l}, {hyper.s_u}]")
    return gaussian_logdensity(theta, theta0, tau)


def commensurate_mixture_logdensity(theta: float, theta0: float, tau: float, hyper: CommensurateHyper) -> float:
    """Spike-and-slab density of theta with the indicator summed out (tau fixed)."""
    terms = []
    if hyper.p0 > 0.0:
        terms.append(np.log(hyper.p0) + spike_slab_logprior(theta, theta0, tau, 1, hyper))
    if hyper.p0 < 1.0:
        terms.append(np.log1p(-hyper.p0) + spike_slab_logprior(theta, theta0, tau, 0, hyper))
    return float(np.logaddexp.reduce(terms))


def mixture_indicator_prob(log_spike, log_slab, prior_spike):
    """Posterior probability of the spike component.

    prior * exp(log_spike) / (prior * exp(log_spike) + (1 - prior) * exp(log_slab)),
    evaluated on the log-odds scale so gaps of several hundred nats are safe.
    """
    log_spike, log_slab, prior = np.broadcast_arrays(
        np.asarray(log_spike, dtype=float), np.asarray(log_slab, dtype=float), np.asarray(prior_spike, dtype=float)
    )
    with np.errstate(divide="ignore"):
        log_odds = np.log(prior) - np.log1p(-prior) + log_spike - log_slab
    prob = np.where(prior <= 0.0, 0.0, np.where(prior >= 1.0, 1.0, expit(log_odds)))
    return float(prob) if prob.ndim == 0 else prob


def nu_full_conditional(iota, hyper: GmcHyper) -> BetaParams:
    """Beta(a1 + sum(iota), a2 + K - sum(iota))."""
    iota = np.asarray(iota)
    spikes = float(iota.sum())
    return BetaParams(hyper.a1 + spikes, hyper.a2 + iota.size - spikes)


def beta_bernoulli_prior_spike(iota, k: int, hyper: GmcHyper) -> float:
    """Pr(iota_k = 1 | iota_{-k}) with nu integrated out of the Beta-Bernoulli prior."""
    iota = np.asarray(iota)
    others = float(iota.sum() - iota[k])
    return (hyper.a1 + others) / (hyper.a1 + hyper.a2 + iota.size - 1)


def random_walk_logprior(gamma, sigma: float) -> float:
    """Vague N(0, 1e4) on gamma_1 plus N(gamma_{k-1}, sigma^2) increments."""
    if sigma <= 0.0:
        raise NonpositiveSigma(f"sigma must be positive, got {sigma}")
    gamma = np.asarray(gamma, dtype=float)
    total = gaussian_logdensity(gamma[0], 0.0, VAGUE_PRECISION)
    if gamma.size > 1:
        total += float(np.sum(gaussian_logdensity(np.diff(gamma), 0.0, 1.0 / sigma ** 2)))
    return total


def gmc_curve_logprior(b, b0, state: IndicatorState, sigma_b: float, hyper: GmcHyper) -> float:
    """GMC prior on the shape coefficients (b_1..b_K) given (b0_1..b0_K).

    Spike: N(b0_k, 1/R). Slab: vague N(0, 1e4) for the slope (first entry),
    N(0, sigma_b^2) for the radial entries.
    """
    b = np.asarray(b, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    iota = state.iota
    if not (b.shape == b0.shape == iota.shape) or b.ndim != 1:
        raise DimensionMismatch(f"b {b.shape}, b0 {b0.shape} and iota {iota.shape} must match")
    if sigma_b <= 0.0:
        raise NonpositiveSigma(f"sigma_b must be positive, got {sigma_b}")
    spike = gaussian_logdensity(b, b0, hyper.R)
    slab_precision = np.full(b.size, 1.0 / sigma_b ** 2)
    slab_precision[0] = VAGUE_PRECISION
    slab = gaussian_logdensity(b, 0.0, slab_precision)
    return float(np.sum(np.where(iota == 1, spike, slab)))

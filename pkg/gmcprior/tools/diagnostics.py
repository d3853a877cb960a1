"""Convergence diagnostics, DIC, posterior summaries and partition ranking."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..errors import EmptyDraws, InsufficientDraws
from ..state import ChainSet

logger = logging.getLogger("gmcprior.diagnostics")


@dataclass(frozen=True)
class Diagnostics:
    rhat: Dict[str, float]
    ess: Dict[str, float]
    accept_rates: Dict[str, List[float]]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"name": list(self.rhat), "rhat": list(self.rhat.values()),
                             "ess": [self.ess[n] for n in self.rhat]})


@dataclass(frozen=True)
class DicResult:
    dbar: float
    pd: float
    dic: float
    warning: Optional[str] = None


@dataclass(frozen=True)
class PartitionFit:
    label: str
    dbar: float
    dic: float
    pd: float = float("nan")
    K: Optional[int] = None
    spacing: Optional[str] = None


def _split_chains(ary: np.ndarray) -> np.ndarray:
    half = ary.shape[1] // 2
    return np.vstack((ary[:, :half], ary[:, -half:]))


def compute_rhat(draws: np.ndarray) -> float:
    """Split-chain potential scale reduction factor of one parameter.

    Args:
        draws: chains x iterations

    Raises:
        InsufficientDraws: fewer than 2 chains or 4 draws per chain.
    """
    ary = np.asarray(draws, dtype=float)
    if ary.ndim != 2 or ary.shape[0] < 2 or ary.shape[1] < 4:
        raise InsufficientDraws(f"split R-hat needs >= 2 chains of >= 4 draws, got shape {ary.shape}")
    ary = _split_chains(ary)
    n = ary.shape[1]
    chain_mean = ary.mean(axis=1)
    within = np.mean(ary.var(axis=1, ddof=1))
    between = n * np.var(chain_mean, ddof=1)
    if within <= 0.0:
        # constant chains: identical constants agree perfectly, distinct ones never mix
        return 1.0 if np.ptp(chain_mean) == 0.0 else float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    size = 2 ** int(np.ceil(np.log2(2 * n - 1)))
    centered = x - x.mean()
    spectrum = np.fft.rfft(centered, size)
    acov = np.fft.irfft(spectrum * np.conjugate(spectrum), size)[:n]
    return acov / n


def effective_sample_size(draws: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence (split chains)."""
    ary = np.asarray(draws, dtype=float)
    if ary.ndim != 2 or ary.shape[1] < 4:
        raise InsufficientDraws(f"ESS needs >= 4 draws per chain, got shape {ary.shape}")
    total = ary.size
    ary = _split_chains(ary) if ary.shape[0] > 1 else ary
    n_chain, n_draw = ary.shape
    acov = np.asarray([_autocov(chain) for chain in ary])
    mean_var = np.mean(acov[:, 0]) * n_draw / (n_draw - 1.0)
    var_plus = mean_var * (n_draw - 1.0) / n_draw
    if n_chain > 1:
        var_plus += np.var(ary.mean(axis=1), ddof=1)
    if var_plus <= 0.0:
        return float(total)

    rho = np.zeros(n_draw)
    rho_even, rho_odd = 1.0, 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    rho[0], rho[1] = rho_even, rho_odd
    t = 1
    while t < n_draw - 2 and rho_even + rho_odd >= 0.0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1], rho[t + 2] = rho_even, rho_odd
        t += 2
    max_t = t - 2
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    tau = -1.0 + 2.0 * np.sum(rho[: max_t + 1]) + np.sum(rho[max_t + 1: max_t + 2])
    tau = max(tau, 1.0 / np.log10(total + 1))
    return float(min(total / tau, total))


def mc_standard_error(draws: np.ndarray) -> float:
    """Monte Carlo standard error of the posterior mean."""
    ary = np.atleast_2d(np.asarray(draws, dtype=float))
    return float(np.std(ary, ddof=1) / np.sqrt(effective_sample_size(ary)))


def diagnose(chains: ChainSet) -> Diagnostics:
    rhat: Dict[str, float] = {}
    ess: Dict[str, float] = {}
    for name in chains.names:
        col = chains.column(name)
        rhat[name] = compute_rhat(col) if col.shape[0] >= 2 and col.shape[1] >= 4 else float("nan")
        ess[name] = effective_sample_size(col) if col.shape[1] >= 4 else float("nan")
    return Diagnostics(rhat, ess, dict(chains.accept_rates))


def compute_dic(deviance_draws: Sequence[float], deviance_at_posterior_mean: float) -> DicResult:
    """DIC = Dbar + pD with pD = Dbar - D(posterior mean)."""
    dev = np.asarray(deviance_draws, dtype=float).reshape(-1)
    if dev.size == 0:
        raise EmptyDraws("DIC needs at least one deviance draw")
    dbar = float(dev.mean())
    pd_ = dbar - float(deviance_at_posterior_mean)
    warning = None
    if pd_ < 0.0:
        warning = f"negative effective number of parameters (pD={pd_:.4g})"
        logger.warning("DIC: %s", warning)
    return DicResult(dbar=dbar, pd=pd_, dic=dbar + pd_, warning=warning)


def summarize(chains: ChainSet, probabilities: Sequence[float] = (0.025, 0.5, 0.975)) -> pd.DataFrame:
    """Pooled-chain mean, sd and linearly interpolated quantiles per parameter."""
    probs = np.asarray(probabilities, dtype=float)
    if np.any((probs <= 0.0) | (probs >= 1.0)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    flat = chains.draws.reshape(-1, len(chains.names))
    sd = flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.zeros(flat.shape[1])
    table = pd.DataFrame({"name": chains.names, "mean": flat.mean(axis=0), "sd": sd})
    if probs.size:
        quantiles = np.quantile(flat, probs, axis=0, method="linear")
        for p, row in zip(probs, quantiles):
            table[f"q{p:g}"] = row
    return table


def borrowing_table(chains: ChainSet) -> pd.DataFrame:
    """Posterior means of the spike indicators and their mixing probability."""
    names = [n for n in chains.names if n.startswith("iota[") or n.startswith("nu")]
    return pd.DataFrame({"name": names, "mean": [float(chains.pooled(n).mean()) for n in names]})


def compare_partitions(fits: Sequence[Union[PartitionFit, Tuple[str, float, float]]]) -> List[PartitionFit]:
    """Rank partitions by DIC, then posterior mean deviance, then label."""
    normalized = [f if isinstance(f, PartitionFit) else PartitionFit(label=f[0], dbar=f[1], dic=f[2]) for f in fits]
    return sorted(normalized, key=lambda f: (f.dic, f.dbar, f.label))

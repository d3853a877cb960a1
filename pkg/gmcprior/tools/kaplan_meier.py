"""Kaplan-Meier product-limit curves and log-rank comparisons (lifelines)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from lifelines import KaplanMeierFitter
from lifelines.statistics import logrank_test

from ..errors import EmptyDraws
from ..state import SurvivalDataset


@dataclass(frozen=True)
class KaplanMeierCurve:
    """Right-continuous step function: ``survival[i]`` holds on [times[i], times[i+1])."""
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def at(self, t: Sequence[float]) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.searchsorted(self.times, t, side="right") - 1
        return np.where(idx >= 0, self.survival[np.clip(idx, 0, None)], 1.0)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"time": self.times, "survival": self.survival, "at_risk": self.at_risk,
                             "lower": self.lower, "upper": self.upper})


def kaplan_meier_arrays(time: Sequence[float], event: Sequence[int], level: float = 0.95) -> KaplanMeierCurve:
    time = np.asarray(time, dtype=float)
    if time.size == 0:
        raise EmptyDraws("Kaplan-Meier needs at least one subject")
    kmf = KaplanMeierFitter(alpha=1.0 - level).fit(time, event_observed=np.asarray(event, dtype=int))
    sf = kmf.survival_function_.iloc[:, 0]
    ci = kmf.confidence_interval_survival_function_
    table = kmf.event_table
    keep = sf.index.values > 0.0
    return KaplanMeierCurve(
        times=sf.index.values[keep].astype(float),
        survival=sf.values[keep].astype(float),
        at_risk=table["at_risk"].reindex(sf.index).values[keep].astype(int),
        lower=ci.iloc[:, 0].values[keep].astype(float),
        upper=ci.iloc[:, 1].values[keep].astype(float),
    )


def kaplan_meier(data: SurvivalDataset, level: float = 0.95) -> KaplanMeierCurve:
    """Product-limit estimate; subjects censored at an event time count as at risk at that time."""
    return kaplan_meier_arrays(data.time, data.event, level)


def logrank(a: SurvivalDataset, b: SurvivalDataset) -> float:
    """Two-sided log-rank p-value comparing two groups."""
    return float(logrank_test(a.time, b.time, event_observed_A=a.event, event_observed_B=b.event).p_value)

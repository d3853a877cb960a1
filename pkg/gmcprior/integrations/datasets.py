"""CSV ingestion for regression and survival datasets.

Files are UTF-8, comma separated, with a mandatory header. Every problem is
reported with the 1-based file line (the header is line 1) and column.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from ..config import settings
from ..errors import NegativeTime, ParseError, RangeError
from ..models.survival import rescale_time
from ..state import SOURCES, TISSUES, RegressionDataset, SurvivalDataset

REGRESSION_COLUMNS = ["y", "t", "source"]
HIERARCHY_COLUMNS = ["individual", "region", "tissue"]
SURVIVAL_COLUMNS = ["time_days", "event", "source"]


def _read(path: str | Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError(1, None, "file is empty") from None
    except pd.errors.ParserError as e:
        raise ParseError(_ragged_line(e), None, f"malformed CSV: {e}") from None
    except UnicodeDecodeError as e:
        raise ParseError(1, None, f"file is not UTF-8: {e.reason}") from None


def _ragged_line(error: pd.errors.ParserError) -> int:
    """File line named in a pandas tokenizer message, or 1 when it names none."""
    match = re.search(r"line (\d+)", str(error))
    return int(match.group(1)) if match else 1


def _line(row: int) -> int:
    return row + 2


def _numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce")
    bad = np.flatnonzero(values.isna().to_numpy())
    if bad.size:
        row = int(bad[0])
        raise ParseError(_line(row), column, f"expected a number, got {frame[column].iloc[row]!r}")
    return values.to_numpy(dtype=float)


def _integer(frame: pd.DataFrame, column: str) -> np.ndarray:
    values = _numeric(frame, column)
    bad = np.flatnonzero(values != np.round(values))
    if bad.size:
        raise ParseError(_line(int(bad[0])), column, f"expected an integer, got {frame[column].iloc[bad[0]]!r}")
    return values.astype(int)


def _labels(frame: pd.DataFrame, column: str, allowed) -> np.ndarray:
    values = frame[column].str.strip().to_numpy()
    bad = np.flatnonzero(~np.isin(values, allowed))
    if bad.size:
        raise ParseError(_line(int(bad[0])), column, f"expected one of {tuple(allowed)}, got {values[bad[0]]!r}")
    return values


def _binary(frame: pd.DataFrame, column: str) -> np.ndarray:
    return _labels(frame, column, ("0", "1")).astype(int)


def parse_regression_csv(path: str | Path, rescale: bool = False) -> RegressionDataset:
    """Read ``y,t,source[,individual,region,tissue]``.

    Args:
        path: CSV file
        rescale: map raw t onto [0, 1] by (t - min) / (max - min) instead of
            requiring t in [0, 1]

    Raises:
        ParseError: malformed header or cell
        RangeError: t outside [0, 1] when ``rescale`` is False
    """
    frame = _read(path)
    header = list(frame.columns)
    if header not in (REGRESSION_COLUMNS, REGRESSION_COLUMNS + HIERARCHY_COLUMNS):
        raise ParseError(1, None, f"header must be {','.join(REGRESSION_COLUMNS)}[,{','.join(HIERARCHY_COLUMNS)}], "
                                  f"got {','.join(header)}")
    y = _numeric(frame, "y")
    t = _numeric(frame, "t")
    if rescale:
        span = float(t.max() - t.min()) if t.size else 0.0
        if span <= 0.0:
            raise ParseError(1, "t", "cannot rescale t: all values are equal")
        t = (t - t.min()) / span
    else:
        bad = np.flatnonzero((t < 0.0) | (t > 1.0))
        if bad.size:
            raise RangeError(_line(int(bad[0])), "t", f"t={t[bad[0]]} outside [0, 1] (use --rescale)")
    source = _labels(frame, "source", SOURCES)
    if len(header) == len(REGRESSION_COLUMNS):
        return RegressionDataset(y, t, source)
    return RegressionDataset(y, t, source, _integer(frame, "individual"), _integer(frame, "region"),
                             _labels(frame, "tissue", TISSUES))


def parse_survival_csv(path: str | Path, horizon_days: Optional[float] = None) -> SurvivalDataset:
    """Read ``time_days,event,source[,z_...]`` with administrative censoring at the horizon.

    Times beyond the horizon become (horizon, censored); times are then rescaled to (0, 1].

    Raises:
        ParseError: malformed header or cell, or treatment indicators on supplemental rows
        NegativeTime: a time that is not positive
    """
    horizon = settings.horizon_days if horizon_days is None else horizon_days
    frame = _read(path)
    header = list(frame.columns)
    treatments: List[str] = header[len(SURVIVAL_COLUMNS):]
    if header[: len(SURVIVAL_COLUMNS)] != SURVIVAL_COLUMNS or not all(z.startswith("z_") for z in treatments):
        raise ParseError(1, None, f"header must be {','.join(SURVIVAL_COLUMNS)}[,z_...], got {','.join(header)}")
    days = _numeric(frame, "time_days")
    bad = np.flatnonzero(days <= 0.0)
    if bad.size:
        raise NegativeTime(f"line {_line(int(bad[0]))}: time_days must be positive, got {days[bad[0]]}")
    event = _binary(frame, "event")
    source = _labels(frame, "source", SOURCES)
    covariates = np.column_stack([_binary(frame, z) for z in treatments]) if treatments else np.zeros((days.size, 0))
    for j, z in enumerate(treatments):
        bad = np.flatnonzero((source == "supplemental") & (covariates[:, j] != 0))
        if bad.size:
            raise ParseError(_line(int(bad[0])), z, "supplemental rows cannot carry treatment indicators")

    beyond = days > horizon
    event = np.where(beyond, 0, event)
    days = np.minimum(days, horizon)
    return SurvivalDataset(rescale_time(days, horizon), event, covariates, tuple(treatments), source)

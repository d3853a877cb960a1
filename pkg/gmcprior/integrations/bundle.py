"""Result bundles: draws, summaries, curve grids, diagnostics and a run manifest.

Every CSV carries the run id of its bundle and writes floats with 17
significant digits, so re-reading a bundle reproduces it exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from ..errors import ParseError
from ..state import ChainSet, CurveSummary
from ..tools.diagnostics import Diagnostics, summarize

logger = logging.getLogger("gmcprior.bundle")

FLOAT_FORMAT = "%.17g"
DRAWS_FILE = "draws.csv"
SUMMARY_FILE = "summary.csv"
DIAGNOSTICS_FILE = "diagnostics.csv"
MANIFEST_FILE = "manifest.json"


class RunManifest(BaseModel):
    run_id: str
    command: str
    config_digest: str
    seed: Optional[int] = None
    version: str
    started: str
    finished: str
    inputs: Dict[str, str]
    files: List[str]
    meta: Dict[str, Any] = {}


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_digest(config: Mapping[str, Any]) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode("utf-8")).hexdigest()


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def curve_file(name: str) -> str:
    return "curve_" + re.sub(r"[^A-Za-z0-9_.-]+", "_", name) + ".csv"


def _write(frame: pd.DataFrame, path: Path, run_id: str) -> None:
    frame = frame.copy()
    frame.insert(0, "run_id", run_id)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def draws_frame(chains: ChainSet) -> pd.DataFrame:
    n_chains, n_stored, _ = chains.draws.shape
    frame = pd.DataFrame(chains.draws.reshape(-1, len(chains.names)), columns=chains.names)
    frame.insert(0, "deviance", chains.deviance.reshape(-1))
    frame.insert(0, "iteration", np.tile(np.arange(n_stored), n_chains))
    frame.insert(0, "chain", np.repeat(np.arange(n_chains), n_stored))
    return frame


def curve_frame(summary: CurveSummary) -> pd.DataFrame:
    return pd.DataFrame({"grid_t": summary.grid, "mean": summary.mean, "lower": summary.lower, "upper": summary.upper})


def write_bundle(
    out_dir: str | Path,
    command: str,
    config: Mapping[str, Any],
    started: str,
    inputs: Sequence[str | Path] = (),
    seed: Optional[int] = None,
    chains: Optional[ChainSet] = None,
    diagnostics: Optional[Diagnostics] = None,
    curves: Optional[Mapping[str, CurveSummary]] = None,
    tables: Optional[Mapping[str, pd.DataFrame]] = None,
    probabilities: Sequence[float] = (0.025, 0.5, 0.975),
) -> RunManifest:
    """Write a bundle into ``out_dir`` and return its manifest.

    The run id is derived from the command, the config digest and the input
    digests, so it is reproducible from the inputs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(config)
    input_digests = {str(p): file_digest(p) for p in inputs}
    run_id = hashlib.sha256(f"{command}|{digest}|{sorted(input_digests.items())}".encode()).hexdigest()[:16]

    files: List[str] = []
    if chains is not None:
        _write(draws_frame(chains), out / DRAWS_FILE, run_id)
        _write(summarize(chains, probabilities), out / SUMMARY_FILE, run_id)
        files += [DRAWS_FILE, SUMMARY_FILE]
    if diagnostics is not None:
        _write(diagnostics.to_frame(), out / DIAGNOSTICS_FILE, run_id)
        files.append(DIAGNOSTICS_FILE)
    for name, summary in (curves or {}).items():
        _write(curve_frame(summary), out / curve_file(name), run_id)
        files.append(curve_file(name))
    for name, frame in (tables or {}).items():
        _write(frame, out / f"{name}.csv", run_id)
        files.append(f"{name}.csv")

    from .. import __version__

    manifest = RunManifest(
        run_id=run_id,
        command=command,
        config_digest=digest,
        seed=seed,
        version=__version__,
        started=started,
        finished=datetime.now(timezone.utc).isoformat(),
        inputs=input_digests,
        files=files,
        meta=_jsonable(chains.meta) if chains is not None else {},
    )
    (out / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info("Wrote %d file(s) and %s to %s", len(files), MANIFEST_FILE, out)
    return manifest


def read_draws(path: str | Path, meta: Optional[Dict[str, Any]] = None) -> ChainSet:
    """Rebuild a ChainSet from a draws file (meta from the sibling manifest when present)."""
    path = Path(path)
    frame = pd.read_csv(path, dtype={"run_id": str}, float_precision="round_trip")
    fixed = ["run_id", "chain", "iteration", "deviance"]
    if list(frame.columns[: len(fixed)]) != fixed:
        raise ParseError(1, None, f"draws file must start with columns {','.join(fixed)}")
    names = list(frame.columns[len(fixed):])
    frame = frame.sort_values(["chain", "iteration"], kind="stable")
    chain_ids = np.unique(frame["chain"].to_numpy())
    per_chain = [frame[frame["chain"] == c] for c in chain_ids]
    if len({len(part) for part in per_chain}) != 1:
        raise ParseError(1, "chain", "chains have different numbers of stored draws")
    manifest = path.parent / MANIFEST_FILE
    if meta is None and manifest.exists():
        meta = json.loads(manifest.read_text(encoding="utf-8")).get("meta", {})
    return ChainSet(
        names=names,
        draws=np.stack([part[names].to_numpy(dtype=float) for part in per_chain]),
        deviance=np.stack([part["deviance"].to_numpy(dtype=float) for part in per_chain]),
        meta=meta or {},
    )


def read_run_id(path: str | Path) -> str:
    return str(pd.read_csv(path, usecols=["run_id"], dtype=str, nrows=1)["run_id"].iloc[0])


def summarize_draws(
    draws_path: str | Path, out_dir: Optional[str | Path] = None, probabilities: Sequence[float] = (0.025, 0.5, 0.975)
) -> pd.DataFrame:
    """Summarize a draws file; with ``out_dir`` the summary is written under the draws file's run id."""
    table = summarize(read_draws(draws_path), probabilities)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write(table, out / SUMMARY_FILE, read_run_id(draws_path))
    return table

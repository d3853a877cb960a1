"""Command-line surface for gmcprior.

Every subcommand writes a result bundle (draws, summaries, curve grids,
diagnostics, run manifest) plus ``run.log`` into its ``--out`` directory.
Exit codes: 0 success, 2 invalid input or usage, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .config import (
    CTP_PRESET,
    REGRESSION_SIM_PRESET,
    SURVIVAL_PRESET,
    GmcHyper,
    commensurate_from,
    gmc_from,
    load_run_config,
    sampler_from,
    settings,
)
from .errors import ConfigError, GmcRuntimeError, GmcValidationError
from .integrations.bundle import summarize_draws, write_bundle
from .integrations.datasets import parse_regression_csv, parse_survival_csv
from .models.regression import (
    GmcRegressionSpec,
    compare_interval_widths,
    deviation_guard,
    fit_ctp_gmc,
    fit_regression_conventional,
    fit_regression_gmc,
    predict_curve,
    predict_derivative,
    select_regression_partition_dic,
)
from .models.survival import (
    DEFAULT_JUMP_SCALE,
    fit_pwe_conventional,
    fit_pwe_gmc,
    hazard_ratio_summary,
    median_survival,
    select_partition_dic,
    survival_curve,
)
from .simulation import SimConfig, plot_ready, run_study
from .state import TISSUES, ChainSet, CurveSummary, RegressionDataset, SurvivalDataset, pool
from .tools.diagnostics import borrowing_table, diagnose
from .tools.kaplan_meier import kaplan_meier, logrank
from .tools.spline_basis import Partition, build_partition

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
GRID_POINTS = 101
T = TypeVar("T")

logger = logging.getLogger("gmcprior")


class FlushFileHandler(logging.FileHandler):
    def emit(self, record):
        super().emit(record)
        self.flush()


def configure_logging(out_dir: Optional[Path] = None, level: Optional[str] = None) -> logging.Logger:
    """Attach a console handler and, with ``out_dir``, a flushing ``run.log`` handler to the package logger."""
    level = level or settings.log_level
    logger.setLevel(level)
    logger.propagate = False
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler()
    console.setLevel(level)
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(console)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        file_handler = FlushFileHandler(out_dir / "run.log", mode="a", encoding="utf-8")
        file_handler.setLevel(level)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        logger.addHandler(file_handler)
    return logger


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------

def _nu_prior(text: str) -> Tuple[float, float]:
    try:
        a1, a2 = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a1,a2 (e.g. 0.10,0.90), got {text!r}") from None
    return a1, a2


def _candidates(text: str, default_spacing: str) -> List[Tuple[int, str]]:
    """Parse ``5,10,15:quantile`` into (K, spacing) pairs."""
    out = []
    for token in filter(None, (t.strip() for t in text.split(","))):
        k, _, spacing = token.partition(":")
        spacing = spacing or default_spacing
        if not k.isdigit() or spacing not in ("equal", "quantile"):
            raise ConfigError(f"bad candidate partition {token!r}; expected K or K:equal|quantile")
        out.append((int(k), spacing))
    if not out:
        raise ConfigError("--candidates lists no partitions")
    return out


def _raw_config(args: argparse.Namespace) -> Dict[str, object]:
    """Config-file values overlaid with the command-line flags that were given."""
    raw: Dict[str, object] = dict(load_run_config(args.config)) if args.config else {}
    overrides = {
        "K": getattr(args, "K", None),
        "spacing": getattr(args, "spacing", None),
        "R_gamma": getattr(args, "R_gamma", None),
        "horizon_days": getattr(args, "horizon", None),
        "seed": getattr(args, "seed", None),
    }
    if getattr(args, "nu_prior", None) is not None:
        overrides["a1"], overrides["a2"] = args.nu_prior
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return raw


def _out_dir(args: argparse.Namespace) -> Path:
    if args.out:
        return Path(args.out)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    return Path(settings.output_dir) / f"{args.command}-{stamp}"


def _float_list(value: object) -> Tuple[float, ...]:
    return tuple(float(v) for v in str(value).split(","))


def _typed(raw: Dict[str, object], key: str, cast: Callable[[object], T], default: T) -> T:
    """Config value converted with ``cast``; a bad value is a ConfigError naming the key."""
    value = raw.get(key, default)
    try:
        return cast(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be {cast.__name__}, got {value!r}") from None


def _level(raw: Dict[str, object]) -> float:
    return _typed(raw, "level", float, 0.95)


def _horizon(raw: Dict[str, object]) -> float:
    return _typed(raw, "horizon_days", float, settings.horizon_days)


def _partition(raw: Dict[str, object], t: np.ndarray, default_k: int = 10) -> Partition:
    return build_partition(_typed(raw, "K", int, default_k), str(raw.get("spacing", "equal")), t)


def _regression_spec(raw: Dict[str, object], t: np.ndarray, preset: Dict[str, object]) -> GmcRegressionSpec:
    try:
        return GmcRegressionSpec(
            partition=_partition(raw, t),
            curve_hyper=gmc_from(raw, preset["curve"]),
            intercept_hyper=commensurate_from(raw, preset["intercept"]),
            force_indicators=raw.get("force_indicators", "free"),
            indicator_update=raw.get("indicator_update", "collapsed"),
        )
    except ValidationError as e:
        raise ConfigError(f"invalid GMC regression setup: {e}") from e


def _grid() -> np.ndarray:
    return np.linspace(0.0, 1.0, GRID_POINTS)


def _regression_pair(args: argparse.Namespace) -> Tuple[RegressionDataset, RegressionDataset, List[str]]:
    if args.data:
        data = parse_regression_csv(args.data, args.rescale)
        return data.select("primary"), data.select("supplemental"), [args.data]
    if not (args.primary and args.supplemental):
        raise ConfigError("give --data with both sources, or --primary and --supplemental")
    primary = parse_regression_csv(args.primary, args.rescale).select("primary")
    supplemental = parse_regression_csv(args.supplemental, args.rescale).select("supplemental")
    return primary, supplemental, [args.primary, args.supplemental]


def _survival_pair(args: argparse.Namespace, horizon: float) -> Tuple[SurvivalDataset, SurvivalDataset, List[str]]:
    if args.data:
        data = parse_survival_csv(args.data, horizon)
        return data.select("primary"), data.select("supplemental"), [args.data]
    if not (args.primary and args.supplemental):
        raise ConfigError("give --data with both sources, or --primary and --supplemental")
    primary = parse_survival_csv(args.primary, horizon).select("primary")
    supplemental = parse_survival_csv(args.supplemental, horizon).select("supplemental")
    return primary, supplemental, [args.primary, args.supplemental]


def _arms(treatments: Sequence[str]) -> List[Tuple[str, Optional[str]]]:
    return [("reference", None)] + [(z, z) for z in treatments]


def _started() -> str:
    return datetime.now(timezone.utc).isoformat()


def _report(chains: ChainSet) -> None:
    for block, rates in chains.accept_rates.items():
        logger.info("acceptance %s: %s", block, ", ".join(f"{r:.2f}" for r in rates))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit_regression(args: argparse.Namespace, out: Path) -> str:
    started = _started()
    raw = _raw_config(args)
    data = parse_regression_csv(args.data, args.rescale)
    data = pool(data) if args.source == "pooled" else data.select(args.source)
    partition = _partition(raw, data.t)
    sampler = sampler_from(raw)
    chains = fit_regression_conventional(data, partition, sampler)
    _report(chains)
    level = _level(raw)
    curves = {
        "primary": predict_curve(chains, "primary", _grid(), level),
        "primary_derivative": predict_derivative(chains, "primary", _grid(), level),
    }
    manifest = write_bundle(out, args.command, raw, started, [args.data], sampler.seed, chains,
                            diagnose(chains), curves)
    return f"{len(data)} observations, K={partition.K}, run {manifest.run_id}"


def cmd_fit_regression_gmc(args: argparse.Namespace, out: Path) -> str:
    started = _started()
    raw = _raw_config(args)
    primary, supplemental, inputs = _regression_pair(args)
    spec = _regression_spec(raw, primary.t, REGRESSION_SIM_PRESET)
    sampler = sampler_from(raw)
    chains = fit_regression_gmc(primary, supplemental, spec, sampler)
    _report(chains)
    level = _level(raw)
    curves = {name: predict_curve(chains, name, _grid(), level) for name in ("primary", "supplemental")}
    borrowing = borrowing_table(chains)
    manifest = write_bundle(out, args.command, raw, started, inputs, sampler.seed, chains, diagnose(chains),
                            curves, {"borrowing": borrowing})
    return f"mean nu={float(chains.pooled('nu').mean()):.3f}, run {manifest.run_id}"


def cmd_fit_ctp(args: argparse.Namespace, out: Path) -> str:
    started = _started()
    raw = _raw_config(args)
    data = parse_regression_csv(args.data, args.rescale)
    sampler = sampler_from(raw)
    spec = _regression_spec(raw, data.t, CTP_PRESET)
    chains = fit_ctp_gmc(data, spec, sampler)
    _report(chains)
    level = _level(raw)
    curves: Dict[str, CurveSummary] = {}
    for tissue in TISSUES:
        curves[tissue] = predict_curve(chains, tissue, _grid(), level)
        curves[f"{tissue}_derivative"] = predict_derivative(chains, tissue, _grid(), level)
    tables = {"borrowing": borrowing_table(chains), "deviation_guard": deviation_guard(chains)}

    if args.compare_conventional:
        conventional = fit_ctp_gmc(data, spec.model_copy(update={"force_indicators": "all_zero"}), sampler)
        rows = []
        for tissue in TISSUES:
            reference = predict_derivative(conventional, tissue, _grid(), level)
            rows.append({"tissue": tissue,
                         "conventional_width": reference.width,
                         "gmc_width": curves[f"{tissue}_derivative"].width,
                         "relative_change": compare_interval_widths(reference, curves[f"{tissue}_derivative"])})
        tables["derivative_width_change"] = pd.DataFrame(rows)

    manifest = write_bundle(out, args.command, raw, started, [args.data], sampler.seed, chains, diagnose(chains),
                            curves, tables)
    return f"{len(chains.meta['groups'])} tissue samples, run {manifest.run_id}"


def _survival_tables(chains: ChainSet, horizon: float, level: float, sources: Sequence[str]) -> Dict[str, pd.DataFrame]:
    treatments = chains.meta.get("treatments", [])
    medians = []
    for source in sources:
        arms = _arms(treatments) if source == "primary" else [("reference", None)]
        for label, z in arms:
            m = median_survival(chains, z, horizon, level, source)
            medians.append({"source": source, "arm": label, "median_days": m.median_days, "lower": m.lower,
                            "upper": m.upper, "excluded_draws": m.excluded, "beyond_horizon": m.censored})
    tables = {"medians": pd.DataFrame(medians)}
    if treatments:
        rows = []
        for z in treatments:
            mean, lower, upper = hazard_ratio_summary(chains, z, level)
            rows.append({"treatment": z, "hr_mean": mean, "lower": lower, "upper": upper})
        tables["hazard_ratios"] = pd.DataFrame(rows)
    return tables


def _survival_curves(chains: ChainSet, level: float, sources: Sequence[str]) -> Dict[str, CurveSummary]:
    curves = {}
    treatments = chains.meta.get("treatments", [])
    for source in sources:
        arms = _arms(treatments) if source == "primary" else [("reference", None)]
        for label, z in arms:
            curves[f"survival_{source}_{label}"] = survival_curve(chains, z, _grid(), level, source)
    return curves


def cmd_fit_survival(args: argparse.Namespace, out: Path) -> str:
    started = _started()
    raw = _raw_config(args)
    horizon = _horizon(raw)
    data = parse_survival_csv(args.data, horizon)
    if args.source != "pooled":
        data = data.select(args.source)
    if args.source != "primary":
        data = data.without_covariates()
    partition = _partition(raw, data.time[data.event == 1], default_k=8)
    sampler = sampler_from(raw)
    chains = fit_pwe_conventional(data, partition, sampler)
    _report(chains)
    level = _level(raw)
    tables = _survival_tables(chains, horizon, level, ["primary"])
    manifest = write_bundle(out, args.command, raw, started, [args.data], sampler.seed, chains, diagnose(chains),
                            _survival_curves(chains, level, ["primary"]), tables)
    return f"{data.events} events among {len(data)} subjects, run {manifest.run_id}"


def cmd_fit_survival_gmc(args: argparse.Namespace, out: Path) -> str:
    started = _started()
    raw = _raw_config(args)
    horizon = _horizon(raw)
    primary, supplemental, inputs = _survival_pair(args, horizon)
    partition = _partition(raw, primary.time[primary.event == 1], default_k=8)
    hyper: GmcHyper = gmc_from(raw, SURVIVAL_PRESET["curve"], r_key="R_gamma")
    force = str(raw.get("force_indicators", "free"))
    if force not in ("free", "all_zero", "all_one"):
        raise ConfigError(f"force_indicators must be free, all_zero or all_one, got {force!r}")
    sampler = sampler_from(raw)
    chains = fit_pwe_gmc(primary, supplemental.without_covariates(), hyper, partition, sampler,
                         _typed(raw, "jump_scale", float, DEFAULT_JUMP_SCALE), force)
    _report(chains)
    level = _level(raw)
    sources = ["primary", "supplemental"]
    tables = _survival_tables(chains, horizon, level, sources)
    tables["borrowing"] = borrowing_table(chains)
    manifest = write_bundle(out, args.command, raw, started, inputs, sampler.seed, chains, diagnose(chains),
                            _survival_curves(chains, level, sources), tables)
    return f"mean nu_gamma={float(chains.pooled('nu_gamma').mean()):.3f}, run {manifest.run_id}"


def cmd_select_partition(args: argparse.Namespace, out: Path) -> str:
    started = _started()
    raw = _raw_config(args)
    sampler = sampler_from(raw)
    spacing = str(raw.get("spacing", "equal"))
    if args.kind == "survival":
        data = parse_survival_csv(args.data, _horizon(raw)).select("primary")
        knots_from = data.time[data.event == 1]
        candidates = [build_partition(k, s, knots_from) for k, s in _candidates(args.candidates, spacing)]
        ranking = select_partition_dic(data, candidates, sampler)
    else:
        data = parse_regression_csv(args.data, args.rescale).select("primary")
        candidates = [build_partition(k, s, data.t) for k, s in _candidates(args.candidates, spacing)]
        ranking = select_regression_partition_dic(data, candidates, sampler)
    table = pd.DataFrame([{"rank": i + 1, "label": f.label, "K": f.K, "spacing": f.spacing,
                           "dbar": f.dbar, "pd": f.pd, "dic": f.dic} for i, f in enumerate(ranking)])
    manifest = write_bundle(out, args.command, raw, started, [args.data], sampler.seed, tables={"partitions": table})
    return f"best partition {ranking[0].label} (DIC {ranking[0].dic:.2f}), run {manifest.run_id}"


def cmd_km(args: argparse.Namespace, out: Path) -> str:
    started = _started()
    raw = _raw_config(args)
    horizon = _horizon(raw)
    data = parse_survival_csv(args.data, horizon)
    groups: Dict[str, SurvivalDataset] = {}
    for source in ("primary", "supplemental"):
        part = data.select(source)
        arms = _arms(part.treatments) if source == "primary" else [("reference", None)]
        for label, z in arms:
            group = part.arm(z)
            if len(group):
                groups[f"{source}_{label}"] = group

    tables: Dict[str, pd.DataFrame] = {}
    for name, group in groups.items():
        frame = kaplan_meier(group, _level(raw)).to_frame()
        frame.insert(1, "time_days", frame["time"] * horizon)
        tables[f"km_{name}"] = frame
    tables["logrank"] = pd.DataFrame([{"group_a": a, "group_b": b, "p_value": logrank(groups[a], groups[b])}
                                      for a, b in itertools.combinations(groups, 2)],
                                     columns=["group_a", "group_b", "p_value"])
    manifest = write_bundle(out, args.command, raw, started, [args.data], tables=tables)
    return f"{len(groups)} group(s), run {manifest.run_id}"


def _sim_config(raw: Dict[str, object]) -> SimConfig:
    fields = {k: raw[k] for k in ("N", "N0", "sigma", "sigma0", "M", "seed", "d_mode", "K", "spacing", "level")
              if k in raw}
    if "d_grid" in raw:
        fields["d_grid"] = _typed(raw, "d_grid", _float_list, ())
    sampler = sampler_from(raw, SimConfig().sampler)
    seed = _typed(raw, "seed", int, SimConfig().seed)
    try:
        return SimConfig(
            sampler=sampler.model_copy(update={"seed": seed}),
            intercept_hyper=commensurate_from(raw, REGRESSION_SIM_PRESET["intercept"]),
            curve_hyper=gmc_from(raw, REGRESSION_SIM_PRESET["curve"]),
            **fields,
        )
    except ValueError as e:
        raise ConfigError(f"invalid simulation config: {e}") from e


def cmd_simulate(args: argparse.Namespace, out: Path) -> str:
    started = _started()
    raw = _raw_config(args)
    cfg = _sim_config(raw)
    result = run_study(cfg, workers=args.workers, progress=not args.no_progress)
    tables = {"records": result.records}
    if not result.table.empty:
        tables["aggregate"] = result.table
        tables["plot_ready"] = plot_ready(result.table)
    if result.failures:
        tables["failures"] = pd.DataFrame(result.failures)
    inputs = [args.config] if args.config else []
    manifest = write_bundle(out, args.command, raw, started, inputs, cfg.seed, tables=tables)
    return f"{cfg.M} replicates, {len(result.failures)} failed, run {manifest.run_id}"


def cmd_summarize(args: argparse.Namespace, out: Path) -> str:
    try:
        probs = tuple(float(p) for p in args.probabilities.split(","))
    except ValueError:
        raise ConfigError(f"bad --probabilities {args.probabilities!r}") from None
    if not all(0.0 < p < 1.0 for p in probs):
        raise ConfigError("probabilities must lie strictly inside (0, 1)")
    table = summarize_draws(args.draws, out, probs)
    logger.info("summarized %d parameter(s) from %s", len(table), args.draws)
    return f"{len(table)} parameter(s) summarized"


COMMANDS = {
    "fit-regression": cmd_fit_regression,
    "fit-regression-gmc": cmd_fit_regression_gmc,
    "fit-ctp": cmd_fit_ctp,
    "fit-survival": cmd_fit_survival,
    "fit-survival-gmc": cmd_fit_survival_gmc,
    "select-partition": cmd_select_partition,
    "km": cmd_km,
    "simulate": cmd_simulate,
    "summarize": cmd_summarize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmcprior",
                                     description="Bayesian spline regression and survival fits with GMC borrowing")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run-config file")
    common.add_argument("--out", help=f"output directory (default: under {settings.output_dir})")
    common.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    common.add_argument("--log-level", help="logging level (default: GMC_LOG_LEVEL)")

    partition = argparse.ArgumentParser(add_help=False)
    partition.add_argument("--K", type=int, help="number of partition intervals")
    partition.add_argument("--spacing", choices=("equal", "quantile"))

    regression = argparse.ArgumentParser(add_help=False)
    regression.add_argument("--rescale", action="store_true", help="map raw t onto [0, 1]")

    survival = argparse.ArgumentParser(add_help=False)
    survival.add_argument("--horizon", type=float, help=f"censoring horizon in days (default {settings.horizon_days:g})")

    pair = argparse.ArgumentParser(add_help=False)
    pair.add_argument("--data", help="one CSV holding both sources")
    pair.add_argument("--primary", help="CSV of the primary source")
    pair.add_argument("--supplemental", help="CSV of the supplemental source")

    p = sub.add_parser("fit-regression", parents=[common, partition, regression], help="conventional spline fit")
    p.add_argument("--data", required=True)
    p.add_argument("--source", choices=("primary", "supplemental", "pooled"), default="primary")

    p = sub.add_parser("fit-regression-gmc", parents=[common, partition, regression, pair], help="two-source GMC fit")
    p.add_argument("--nu-prior", type=_nu_prior, help="Beta prior a1,a2 on nu")

    p = sub.add_parser("fit-ctp", parents=[common, partition, regression], help="hierarchical CTp GMC fit")
    p.add_argument("--data", required=True)
    p.add_argument("--nu-prior", type=_nu_prior)
    p.add_argument("--compare-conventional", action="store_true",
                   help="also fit without borrowing and report derivative interval widths")

    p = sub.add_parser("fit-survival", parents=[common, partition, survival], help="conventional PWE fit")
    p.add_argument("--data", required=True)
    p.add_argument("--source", choices=("primary", "supplemental", "pooled"), default="primary")

    p = sub.add_parser("fit-survival-gmc", parents=[common, partition, survival, pair], help="PWE fit with GMC borrowing")
    p.add_argument("--R-gamma", dest="R_gamma", type=float, help="spike precision R_gamma")
    p.add_argument("--nu-prior", type=_nu_prior)

    p = sub.add_parser("select-partition", parents=[common, regression, survival], help="rank partitions by DIC")
    p.add_argument("--kind", choices=("survival", "regression"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--candidates", required=True, help="comma list of K or K:spacing, e.g. 5,10,15:quantile")
    p.add_argument("--spacing", choices=("equal", "quantile"))

    p = sub.add_parser("km", parents=[common, survival], help="Kaplan-Meier curves and log-rank tests")
    p.add_argument("--data", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulation study of borrowing behaviour")
    p.add_argument("--workers", type=int, help="process count (default: GMC_THREADS)")
    p.add_argument("--no-progress", action="store_true")

    p = sub.add_parser("summarize", parents=[common], help="summarize an emitted draws file")
    p.add_argument("--draws", required=True)
    p.add_argument("--probabilities", default="0.025,0.5,0.975")
    return parser


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    out = _out_dir(args)
    configure_logging(out, args.log_level.upper() if args.log_level else None)
    logger.info("gmcprior %s -> %s", args.command, out)
    try:
        message = COMMANDS[args.command](args, out)
    except GmcValidationError as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        logger.error("cannot read input: %s", e)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except GmcRuntimeError as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"error: {e}", file=sys.stderr)
        return 3
    print(f"[OK] {args.command}: {message} ({out})")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> None:
    sys.exit(cli_dispatch(argv))


if __name__ == "__main__":
    main()

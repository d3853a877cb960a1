"""Tests for CSV ingestion, run-config files, result bundles and the command-line dispatcher."""

import json

import numpy as np
import pandas as pd
import pytest

from gmcprior.config import SamplerConfig, load_run_config, sampler_from
from gmcprior.errors import ConfigError, NegativeTime, ParseError, RangeError
from gmcprior.integrations.bundle import (
    DRAWS_FILE,
    MANIFEST_FILE,
    SUMMARY_FILE,
    read_draws,
    read_run_id,
    summarize_draws,
    write_bundle,
)
from gmcprior.integrations.datasets import parse_regression_csv, parse_survival_csv
from gmcprior.run import cli_dispatch
from gmcprior.simulation import true_mean
from gmcprior.state import ChainSet
from gmcprior.tools.diagnostics import diagnose


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def regression_csv(tmp_path):
    rng = np.random.default_rng(1)
    t = np.linspace(0.0, 1.0, 30)
    lines = ["y,t,source"]
    for source in ("primary", "supplemental"):
        y = true_mean(t) + 0.3 * rng.standard_normal(t.size)
        lines += [f"{float(yi)!r},{float(ti)!r},{source}" for yi, ti in zip(y, t)]
    return _write(tmp_path / "regression.csv", "\n".join(lines) + "\n")


@pytest.fixture
def survival_csv(tmp_path):
    rows = ["time_days,event,source,z_F"]
    rng = np.random.default_rng(2)
    for i in range(40):
        days = float(rng.integers(10, 900))
        rows.append(f"{days},{int(rng.integers(0, 2))},primary,{i % 2}")
    for _ in range(30):
        rows.append(f"{float(rng.integers(10, 900))},1,supplemental,0")
    return _write(tmp_path / "survival.csv", "\n".join(rows) + "\n")


@pytest.fixture
def fast_config(tmp_path):
    return _write(tmp_path / "run.cfg", "# quick chains\nchains=2\nburn_in=20\niterations=40\nseed=7\n")


def test_parse_regression_csv(regression_csv):
    data = parse_regression_csv(regression_csv)
    assert len(data) == 60
    assert len(data.select("primary")) == 30
    assert not data.has_hierarchy


def test_regression_header_and_cell_errors(tmp_path):
    with pytest.raises(ParseError) as e:
        parse_regression_csv(_write(tmp_path / "a.csv", "y,x,source\n1,0.5,primary\n"))
    assert e.value.line == 1

    with pytest.raises(RangeError) as e:
        parse_regression_csv(_write(tmp_path / "b.csv", "y,t,source\n1,0.5,primary\n2,1.5,primary\n"))
    assert (e.value.line, e.value.column) == (3, "t")

    with pytest.raises(ParseError) as e:
        parse_regression_csv(_write(tmp_path / "c.csv", "y,t,source\nabc,0.5,primary\n"))
    assert (e.value.line, e.value.column) == (2, "y")

    with pytest.raises(ParseError) as e:
        parse_regression_csv(_write(tmp_path / "d.csv", "y,t,source\n1,0.5,primary\n1,0.5,other\n"))
    assert (e.value.line, e.value.column) == (3, "source")

    with pytest.raises(ParseError):
        parse_regression_csv(_write(tmp_path / "e.csv", ""))


def test_regression_rescale(tmp_path):
    path = _write(tmp_path / "raw.csv", "y,t,source\n1,10,primary\n2,15,primary\n3,20,primary\n")
    assert parse_regression_csv(path, rescale=True).t.tolist() == [0.0, 0.5, 1.0]
    with pytest.raises(RangeError):
        parse_regression_csv(path)


def test_hierarchy_columns(tmp_path):
    text = ("y,t,source,individual,region,tissue\n"
            "1.0,0.0,primary,1,2,cancerous\n"
            "2.0,1.0,supplemental,1,2,noncancerous\n")
    data = parse_regression_csv(_write(tmp_path / "ctp.csv", text))
    assert data.has_hierarchy
    assert data.tissue.tolist() == ["cancerous", "noncancerous"]
    assert data.region.tolist() == [2, 2]

    bad = text.replace("noncancerous", "normal")
    with pytest.raises(ParseError) as e:
        parse_regression_csv(_write(tmp_path / "bad.csv", bad))
    assert (e.value.line, e.value.column) == (3, "tissue")

    with pytest.raises(ParseError) as e:
        parse_regression_csv(_write(tmp_path / "ind.csv", text.replace(",1,2,cancerous", ",1.5,2,cancerous")))
    assert e.value.column == "individual"


def test_parse_survival_csv(tmp_path):
    path = _write(tmp_path / "s.csv", "time_days,event,source,z_F\n365,1,primary,1\n800,1,primary,0\n73,0,supplemental,0\n")
    data = parse_survival_csv(path, 730.0)
    assert data.time.tolist() == [0.5, 1.0, 0.1]
    assert data.event.tolist() == [1, 0, 0]
    assert data.treatments == ("z_F",)
    assert data.covariates[:, 0].tolist() == [1.0, 0.0, 0.0]


def test_survival_parse_errors(tmp_path):
    with pytest.raises(ParseError) as e:
        parse_survival_csv(_write(tmp_path / "a.csv", "time_days,event,source\n10,2,primary\n"), 730.0)
    assert (e.value.line, e.value.column) == (2, "event")

    with pytest.raises(NegativeTime):
        parse_survival_csv(_write(tmp_path / "b.csv", "time_days,event,source\n10,1,primary\n-5,1,primary\n"), 730.0)

    with pytest.raises(ParseError) as e:
        parse_survival_csv(_write(tmp_path / "c.csv", "time_days,event,source,z_F\n10,1,supplemental,1\n"), 730.0)
    assert e.value.column == "z_F"

    with pytest.raises(ParseError) as e:
        parse_survival_csv(_write(tmp_path / "d.csv", "time_days,event,source,arm\n10,1,primary,1\n"), 730.0)
    assert e.value.line == 1


def test_load_run_config(tmp_path, fast_config):
    raw = load_run_config(fast_config)
    assert raw == {"chains": "2", "burn_in": "20", "iterations": "40", "seed": "7"}
    assert sampler_from(raw) == SamplerConfig(chains=2, burn_in=20, iterations=40, seed=7)

    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path / "u.cfg", "colour=blue\n"))
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path / "d.cfg", "seed=1\nseed=2\n"))
    with pytest.raises(ConfigError):
        load_run_config(_write(tmp_path / "m.cfg", "chains 2\n"))
    with pytest.raises(ConfigError):
        sampler_from({"chains": "0"})


def _toy_chains():
    rng = np.random.default_rng(4)
    draws = rng.normal(size=(2, 25, 3)) * np.array([1.0, 1e-7, 3e5])
    return ChainSet(["b[0]", "b[1]", "sigma"], draws, rng.normal(100.0, 1.0, size=(2, 25)),
                    meta={"kind": "regression", "knots": [0.0, 0.5, 1.0]})


def test_bundle_round_trip(tmp_path):
    chains = _toy_chains()
    out = tmp_path / "bundle"
    manifest = write_bundle(out, "fit-regression", {"K": 2}, "2026-01-01T00:00:00+00:00",
                            seed=7, chains=chains, diagnostics=diagnose(chains))
    assert manifest.files == [DRAWS_FILE, SUMMARY_FILE, "diagnostics.csv"]
    stored = json.loads((out / MANIFEST_FILE).read_text(encoding="utf-8"))
    assert stored["run_id"] == manifest.run_id
    assert stored["meta"]["knots"] == [0.0, 0.5, 1.0]

    again = read_draws(out / DRAWS_FILE)
    assert again.names == chains.names
    assert np.array_equal(again.draws, chains.draws)
    assert np.array_equal(again.deviance, chains.deviance)
    assert again.meta["kind"] == "regression"

    resummary = tmp_path / "resummary"
    summarize_draws(out / DRAWS_FILE, resummary)
    assert (resummary / SUMMARY_FILE).read_bytes() == (out / SUMMARY_FILE).read_bytes()
    assert read_run_id(resummary / SUMMARY_FILE) == manifest.run_id == read_run_id(out / DRAWS_FILE)


def test_run_id_follows_config_and_inputs(tmp_path):
    data = _write(tmp_path / "in.csv", "y,t,source\n1,0.5,primary\n")
    started = "2026-01-01T00:00:00+00:00"
    a = write_bundle(tmp_path / "a", "km", {"K": 2}, started, [data]).run_id
    b = write_bundle(tmp_path / "b", "km", {"K": 2}, started, [data]).run_id
    c = write_bundle(tmp_path / "c", "km", {"K": 3}, started, [data]).run_id
    _write(data, "y,t,source\n2,0.5,primary\n")
    d = write_bundle(tmp_path / "d", "km", {"K": 2}, started, [data]).run_id
    assert a == b
    assert len({a, c, d}) == 3


def test_read_draws_rejects_foreign_files(tmp_path):
    with pytest.raises(ParseError):
        read_draws(_write(tmp_path / "x.csv", "a,b\n1,2\n"))


def test_cli_usage_errors(tmp_path, regression_csv):
    assert cli_dispatch(["no-such-command"]) == 2
    assert cli_dispatch(["fit-regression", "--out", str(tmp_path / "o")]) == 2
    missing = str(tmp_path / "missing.csv")
    assert cli_dispatch(["fit-regression", "--data", missing, "--out", str(tmp_path / "o1")]) == 2
    bad = _write(tmp_path / "bad.csv", "y,t,source\n1,2.0,primary\n")
    assert cli_dispatch(["fit-regression", "--data", str(bad), "--out", str(tmp_path / "o2")]) == 2
    assert cli_dispatch(["fit-regression-gmc", "--primary", str(regression_csv), "--out", str(tmp_path / "o3")]) == 2
    assert cli_dispatch(["select-partition", "--kind", "regression", "--data", str(regression_csv),
                         "--candidates", "4:cubic", "--out", str(tmp_path / "o4")]) == 2


def test_cli_fit_regression_and_summarize(tmp_path, regression_csv, fast_config, capsys):
    out = tmp_path / "fit"
    code = cli_dispatch(["fit-regression", "--data", str(regression_csv), "--config", str(fast_config),
                         "--K", "4", "--out", str(out)])
    assert code == 0
    assert "[OK] fit-regression" in capsys.readouterr().out
    for name in (DRAWS_FILE, SUMMARY_FILE, MANIFEST_FILE, "diagnostics.csv", "curve_primary.csv",
                 "curve_primary_derivative.csv", "run.log"):
        assert (out / name).exists()
    curve = pd.read_csv(out / "curve_primary.csv")
    assert list(curve.columns) == ["run_id", "grid_t", "mean", "lower", "upper"]
    assert len(curve) == 101

    again = tmp_path / "again"
    assert cli_dispatch(["summarize", "--draws", str(out / DRAWS_FILE), "--out", str(again)]) == 0
    assert (again / SUMMARY_FILE).read_bytes() == (out / SUMMARY_FILE).read_bytes()
    assert cli_dispatch(["summarize", "--draws", str(out / DRAWS_FILE), "--probabilities", "0,1",
                         "--out", str(tmp_path / "p")]) == 2


def test_cli_km(tmp_path, survival_csv):
    out = tmp_path / "km"
    assert cli_dispatch(["km", "--data", str(survival_csv), "--out", str(out)]) == 0
    for name in ("km_primary_reference.csv", "km_primary_z_F.csv", "km_supplemental_reference.csv", "logrank.csv"):
        assert (out / name).exists()
    table = pd.read_csv(out / "km_primary_z_F.csv")
    assert table["time_days"].max() <= 730.0
    assert len(pd.read_csv(out / "logrank.csv")) == 3


@pytest.mark.slow
def test_cli_fit_survival_gmc(tmp_path, survival_csv, fast_config):
    out = tmp_path / "gmc"
    code = cli_dispatch(["fit-survival-gmc", "--data", str(survival_csv), "--config", str(fast_config),
                         "--K", "3", "--out", str(out)])
    assert code == 0
    assert (out / "borrowing.csv").exists()
    assert (out / "hazard_ratios.csv").exists()


def test_ragged_rows_are_parse_errors(tmp_path):
    with pytest.raises(ParseError) as e:
        parse_regression_csv(_write(tmp_path / "r.csv", "y,t,source\n1,0.5,primary\n2,0.5,primary,extra\n"))
    assert e.value.line == 3


def test_survival_horizon_is_configurable(tmp_path):
    path = _write(tmp_path / "h.csv", "time_days,event,source\n100,1,primary\n400,1,primary\n365,1,supplemental\n")
    data = parse_survival_csv(path, 365.0)
    assert data.time.tolist() == pytest.approx([100 / 365, 1.0, 1.0])
    assert data.event.tolist() == [1, 0, 1]
    assert data.events == 2


@pytest.mark.parametrize("line", ["K=abc", "level=high", "jump_scale=wide", "horizon_days=two years"])
def test_cli_bad_config_values_exit_2(tmp_path, survival_csv, line):
    config = _write(tmp_path / "bad.cfg", f"iterations=10\nburn_in=5\n{line}\n")
    code = cli_dispatch(["fit-survival-gmc", "--data", str(survival_csv), "--config", str(config),
                         "--out", str(tmp_path / "o")])
    assert code == 2


def test_cli_bad_simulation_config_exits_2(tmp_path):
    for n, text in enumerate(["d_grid=0,far\n", "M=many\n", "seed=x\n"]):
        config = _write(tmp_path / f"sim{n}.cfg", text)
        assert cli_dispatch(["simulate", "--config", str(config), "--no-progress", "--out", str(tmp_path / f"s{n}")]) == 2


def test_cli_ragged_input_exits_2(tmp_path):
    data = _write(tmp_path / "ragged.csv", "y,t,source\n1,0.5,primary\n2,0.5,primary,x\n")
    assert cli_dispatch(["fit-regression", "--data", str(data), "--out", str(tmp_path / "o")]) == 2


def test_cli_fit_survival(tmp_path, survival_csv, fast_config):
    out = tmp_path / "pwe"
    code = cli_dispatch(["fit-survival", "--data", str(survival_csv), "--config", str(fast_config),
                         "--K", "3", "--out", str(out)])
    assert code == 0
    for name in (DRAWS_FILE, SUMMARY_FILE, MANIFEST_FILE, "diagnostics.csv", "medians.csv", "hazard_ratios.csv",
                 "curve_survival_primary_reference.csv", "curve_survival_primary_z_F.csv"):
        assert (out / name).exists()
    medians = pd.read_csv(out / "medians.csv")
    assert medians["arm"].tolist() == ["reference", "z_F"]
    assert read_draws(out / DRAWS_FILE).names[:3] == ["gamma[0]", "gamma[1]", "gamma[2]"]


@pytest.fixture
def ctp_csv(tmp_path):
    rng = np.random.default_rng(3)
    t = np.linspace(0.0, 1.0, 15)
    lines = ["y,t,source,individual,region,tissue"]
    for tissue, source in (("cancerous", "primary"), ("noncancerous", "supplemental")):
        for individual in (1, 2):
            y = true_mean(t) + 0.2 * rng.standard_normal(t.size)
            lines += [f"{float(yi)!r},{float(ti)!r},{source},{individual},1,{tissue}" for yi, ti in zip(y, t)]
    return _write(tmp_path / "ctp.csv", "\n".join(lines) + "\n")


def test_cli_fit_ctp(tmp_path, ctp_csv, fast_config):
    out = tmp_path / "ctp"
    code = cli_dispatch(["fit-ctp", "--data", str(ctp_csv), "--config", str(fast_config), "--K", "4",
                         "--compare-conventional", "--out", str(out)])
    assert code == 0
    for name in ("curve_cancerous.csv", "curve_noncancerous.csv", "curve_cancerous_derivative.csv",
                 "borrowing.csv", "deviation_guard.csv", "derivative_width_change.csv"):
        assert (out / name).exists()
    widths = pd.read_csv(out / "derivative_width_change.csv")
    assert widths["tissue"].tolist() == ["cancerous", "noncancerous"]
    stored = json.loads((out / MANIFEST_FILE).read_text(encoding="utf-8"))
    assert len(stored["meta"]["groups"]) == 4


@pytest.mark.parametrize("kind", ["regression", "survival"])
def test_cli_select_partition(tmp_path, regression_csv, survival_csv, fast_config, kind):
    data = regression_csv if kind == "regression" else survival_csv
    out = tmp_path / kind
    code = cli_dispatch(["select-partition", "--kind", kind, "--data", str(data), "--config", str(fast_config),
                         "--candidates", "3,4:quantile", "--out", str(out)])
    assert code == 0
    table = pd.read_csv(out / "partitions.csv")
    assert table["rank"].tolist() == [1, 2]
    assert sorted(table["K"]) == [3, 4]
    assert table["dic"].is_monotonic_increasing


def test_cli_simulate(tmp_path):
    config = _write(tmp_path / "sim.cfg", "M=2\nN=20\nN0=20\nK=4\nd_grid=0,5\nd_mode=stratified\n"
                                          "chains=2\nburn_in=10\niterations=20\nseed=3\n")
    out = tmp_path / "study"
    code = cli_dispatch(["simulate", "--config", str(config), "--workers", "1", "--no-progress", "--out", str(out)])
    assert code == 0
    records = pd.read_csv(out / "records.csv")
    assert list(records.columns) == ["run_id", "replicate", "seed", "d", "estimator", "me", "rmse", "criw", "cp"]
    assert sorted(records["d"].unique()) == [0.0, 5.0]
    assert len(pd.read_csv(out / "aggregate.csv")) == 6
    assert "rmse_gmc" in pd.read_csv(out / "plot_ready.csv").columns
    assert json.loads((out / MANIFEST_FILE).read_text(encoding="utf-8"))["files"] == [
        "records.csv", "aggregate.csv", "plot_ready.csv"]

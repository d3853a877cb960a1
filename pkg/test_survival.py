"""Tests for the piecewise-exponential models, survival summaries and Kaplan-Meier."""

import numpy as np
import pytest
from scipy import integrate

from gmcprior.config import SURVIVAL_PRESET, SamplerConfig
from gmcprior.errors import (
    DimensionMismatch,
    DomainError,
    EmptyDraws,
    NoEvents,
    OutOfHorizon,
    UnknownCovariateSetting,
    UnknownTreatment,
)
from gmcprior.models.survival import (
    PweParams,
    fit_pwe_conventional,
    fit_pwe_gmc,
    hazard_ratio_summary,
    interval_exposure,
    interval_index,
    invert_cumulative_hazard,
    median_survival,
    pwe_loglik,
    rescale_time,
    select_partition_dic,
    simulate_pwe,
    survival_curve,
)
from gmcprior.state import ChainSet, SurvivalDataset
from gmcprior.tools.diagnostics import compare_partitions, mc_standard_error
from gmcprior.tools.kaplan_meier import kaplan_meier, kaplan_meier_arrays, logrank
from gmcprior.tools.spline_basis import Partition, build_partition

LOG2 = np.log(2.0)
SMALL = SamplerConfig(chains=2, burn_in=500, iterations=2000, seed=41)


def _subjects(time, event, covariates=None, treatments=(), source="primary"):
    time = np.asarray(time, dtype=float)
    cov = np.zeros((time.size, len(treatments))) if covariates is None else np.asarray(covariates, dtype=float)
    return SurvivalDataset(time, event, cov, tuple(treatments), np.full(time.size, source))


def _chains(gamma_draws, knots, rho_draws=None, treatments=()):
    """Single-chain ChainSet of hand-picked log-hazard (and log hazard ratio) draws."""
    gamma_draws = np.atleast_2d(np.asarray(gamma_draws, dtype=float))
    names = [f"gamma[{k}]" for k in range(gamma_draws.shape[1])]
    columns = [gamma_draws]
    if rho_draws is not None:
        rho_draws = np.asarray(rho_draws, dtype=float).reshape(gamma_draws.shape[0], -1)
        names += [f"rho[{j}]" for j in range(rho_draws.shape[1])]
        columns.append(rho_draws)
    draws = np.hstack(columns)[None, :, :]
    meta = {"kind": "pwe", "knots": list(knots), "spacing": "custom",
            "treatments": list(treatments), "sources": {"primary": "gamma"}}
    return ChainSet(names, draws, np.zeros(draws.shape[:2]), meta)


def test_rescale_time():
    assert rescale_time([730.0], 730.0).tolist() == [1.0]
    assert rescale_time([365.0], 730.0).tolist() == [0.5]
    with pytest.raises(OutOfHorizon):
        rescale_time([731.0], 730.0)
    with pytest.raises(DomainError):
        rescale_time([0.0], 730.0)


def test_intervals_are_right_closed():
    p = Partition(np.array([0.0, 0.5, 1.0]))
    assert interval_index(np.array([0.25, 0.5, 0.5000001, 1.0]), p).tolist() == [0, 0, 1, 1]
    assert interval_exposure(np.array([0.75]), p) == pytest.approx(np.array([[0.5, 0.25]]))
    assert interval_exposure(np.array([0.3]), p) == pytest.approx(np.array([[0.3, 0.0]]))


def test_pwe_loglik_hand_values():
    single = Partition(np.array([0.0, 1.0]))
    assert pwe_loglik(PweParams([0.0]), _subjects([0.5], [1]), single) == pytest.approx(-0.5)
    assert pwe_loglik(PweParams([0.0]), _subjects([0.5], [0]), single) == pytest.approx(-0.5)

    half = Partition(np.array([0.0, 0.5, 1.0]))
    value = pwe_loglik(PweParams([0.0, LOG2]), _subjects([0.75], [1]), half)
    assert value == pytest.approx(LOG2 - 1.0)
    assert value == pytest.approx(-0.30685, abs=1e-5)


def test_pwe_loglik_dimension_checks():
    half = Partition(np.array([0.0, 0.5, 1.0]))
    with pytest.raises(DimensionMismatch):
        pwe_loglik(PweParams([0.0]), _subjects([0.5], [1]), half)
    with pytest.raises(DimensionMismatch):
        pwe_loglik(PweParams([0.0, 0.0], [0.1]), _subjects([0.5], [1]), half)


def test_pwe_loglik_matches_numerical_integration():
    rng = np.random.default_rng(8)
    for K in (1, 3, 8):
        p = build_partition(K)
        gamma = rng.normal(0.0, 0.7, K)
        rho = rng.normal(0.0, 0.5, 2)
        n = 15
        z = rng.integers(0, 2, size=(n, 2))
        data = _subjects(rng.uniform(0.01, 1.0, n), rng.integers(0, 2, n), z, ("z_F", "z_I"))

        expected = 0.0
        for t, c, zi in zip(data.time, data.event, data.covariates):
            eta = rho @ zi
            k = interval_index(np.array([t]), p)[0]
            hazard = lambda s: np.exp(gamma[interval_index(np.array([s]), p)[0]] + eta)
            inner = [x for x in p.knots[1:-1] if x < t]
            cumulative, _ = integrate.quad(hazard, 0.0, t, points=inner or None, limit=200, epsabs=1e-12)
            expected += c * (gamma[k] + eta) - cumulative
        assert pwe_loglik(PweParams(gamma, rho), data, p) == pytest.approx(expected, abs=1e-6)


def test_censored_subjects_contribute_minus_cumulative_hazard():
    p = build_partition(4)
    gamma = np.array([0.2, -0.4, 0.1, 0.5])
    data = _subjects([0.1, 0.6, 1.0], [0, 0, 0])
    cumulative = np.exp(gamma) @ interval_exposure(data.time, p).T
    assert pwe_loglik(PweParams(gamma), data, p) == pytest.approx(-cumulative.sum())


def test_pwe_loglik_is_additive():
    p = build_partition(3)
    a = simulate_pwe([1.0, 2.0, 0.5], p, 40, seed=1, arms={"z_F": 0.7}, censor_max=1.5)
    b = simulate_pwe([1.5, 1.0, 1.0], p, 30, seed=2, arms={"z_F": 1.2})
    params = PweParams([0.1, 0.3, -0.2], [-0.4])
    joined = SurvivalDataset.concat([a, b])
    assert pwe_loglik(params, joined, p) == pytest.approx(pwe_loglik(params, a, p) + pwe_loglik(params, b, p))


def test_simulate_pwe_is_deterministic_and_balanced():
    p = build_partition(2)
    a = simulate_pwe([1.0, 1.0], p, 90, seed=5, arms={"z_F": 0.5, "z_I": 2.0})
    b = simulate_pwe([1.0, 1.0], p, 90, seed=5, arms={"z_F": 0.5, "z_I": 2.0})
    assert np.array_equal(a.time, b.time) and np.array_equal(a.event, b.event)
    assert a.treatments == ("z_F", "z_I")
    assert a.covariates.sum(axis=0).tolist() == [30.0, 30.0]
    assert np.all((a.time > 0.0) & (a.time <= 1.0))
    assert np.all(a.event[a.time < 1.0] == 1)
    with pytest.raises(DimensionMismatch):
        simulate_pwe([1.0], p, 10, seed=5)


def test_survival_curve_hand_values():
    chains = _chains([[0.0]], [0.0, 1.0])
    curve = survival_curve(chains, None, [0.0, 0.5, 1.0])
    assert curve.mean[0] == 1.0
    assert curve.mean[2] == pytest.approx(np.exp(-1.0))
    assert curve.mean[2] == pytest.approx(0.36788, abs=1e-5)
    assert np.all(curve.lower == curve.upper)
    with pytest.raises(DomainError):
        survival_curve(chains, None, [1.5])


def test_survival_curve_proportional_hazards():
    rng = np.random.default_rng(12)
    knots = [0.0, 0.25, 0.5, 0.75, 1.0]
    grid = np.linspace(0.05, 1.0, 20)
    for _ in range(5):
        gamma, rho = rng.normal(size=(1, 4)), rng.normal(size=(1, 1))
        chains = _chains(gamma, knots, rho, ("z_F",))
        treated = survival_curve(chains, {"z_F": 1}, grid).mean
        reference = survival_curve(chains, None, grid).mean
        assert np.log(treated) / np.log(reference) == pytest.approx(np.full(20, np.exp(rho[0, 0])), rel=1e-10)


def test_survival_curve_covariate_errors():
    chains = _chains([[0.0, 0.1]], [0.0, 0.5, 1.0], [[0.2]], ("z_F",))
    with pytest.raises(UnknownCovariateSetting):
        survival_curve(chains, {"z_X": 1}, [0.5])
    with pytest.raises(UnknownCovariateSetting):
        survival_curve(chains, {"z_F": 2}, [0.5])


def test_median_survival_constant_hazard():
    chains = _chains([[LOG2, LOG2]], [0.0, 0.5, 1.0])
    median = median_survival(chains, None, 730.0)
    assert median.median_days == pytest.approx(730.0 * LOG2 / 2.0)
    assert median.median_days == pytest.approx(253.0, abs=0.05)
    assert median.excluded == 0 and not median.censored


def test_doubling_hazards_halves_the_median():
    rng = np.random.default_rng(4)
    p = build_partition(1)
    rates = np.exp(rng.normal(1.0, 0.2, size=(30, 1)))
    base = invert_cumulative_hazard(rates, p, LOG2)
    assert base == pytest.approx(LOG2 / rates[:, 0], rel=1e-12)
    assert invert_cumulative_hazard(2.0 * rates, p, LOG2) == pytest.approx(base / 2.0, rel=1e-12)

    piecewise = np.exp(rng.normal(0.5, 0.3, size=(30, 4)))
    q = build_partition(4)
    t, t2 = invert_cumulative_hazard(piecewise, q, LOG2), invert_cumulative_hazard(2.0 * piecewise, q, LOG2)
    ok = ~np.isnan(t)
    assert np.all(t2[ok] < t[ok])


def test_inverted_median_has_survival_one_half():
    rng = np.random.default_rng(6)
    p = build_partition(6)
    rates = np.exp(rng.normal(0.8, 0.5, size=(50, 6)))
    t = invert_cumulative_hazard(rates, p, LOG2)
    ok = ~np.isnan(t)
    cumulative = np.sum(rates[ok] * interval_exposure(t[ok], p), axis=1)
    assert np.exp(-cumulative) == pytest.approx(np.full(ok.sum(), 0.5), abs=1e-10)


def test_median_beyond_horizon_is_censored():
    chains = _chains([[np.log(0.1)]], [0.0, 1.0])
    median = median_survival(chains, None, 730.0)
    assert median.censored
    assert median.median_days == 730.0


def test_median_excludes_draws_beyond_horizon():
    chains = _chains([[np.log(2.0)], [np.log(2.0)], [np.log(0.2)]], [0.0, 1.0])
    median = median_survival(chains, None, 730.0)
    assert median.excluded == 1
    assert median.median_days == pytest.approx(730.0 * LOG2 / 2.0)


def test_hazard_ratio_summary():
    zero = _chains(np.zeros((4, 1)), [0.0, 1.0], np.zeros(4), ("z_F",))
    assert hazard_ratio_summary(zero, "z_F") == pytest.approx((1.0, 1.0, 1.0))
    symmetric = _chains(np.zeros((2, 1)), [0.0, 1.0], [LOG2, -LOG2], ("z_F",))
    assert hazard_ratio_summary(symmetric, "z_F")[0] == pytest.approx(1.25)
    with pytest.raises(UnknownTreatment):
        hazard_ratio_summary(symmetric, "z_I")


def test_kaplan_meier_hand_case():
    km = kaplan_meier_arrays([1.0, 2.0, 3.0], [1, 0, 1])
    assert km.times.tolist() == [1.0, 2.0, 3.0]
    assert km.survival == pytest.approx([2 / 3, 2 / 3, 0.0])
    assert km.at_risk.tolist() == [3, 2, 1]
    assert km.at([0.5, 1.0, 2.5, 4.0]) == pytest.approx([1.0, 2 / 3, 2 / 3, 0.0])
    assert list(km.to_frame().columns) == ["time", "survival", "at_risk", "lower", "upper"]


def test_kaplan_meier_all_censored_and_uncensored():
    censored = kaplan_meier(_subjects([0.2, 0.4, 0.9], [0, 0, 0]))
    assert np.all(censored.survival == 1.0)

    t = np.array([0.1, 0.3, 0.35, 0.6, 0.8])
    full = kaplan_meier(_subjects(t, np.ones(5, dtype=int)))
    ecdf = np.arange(1, 6) / 5
    assert full.survival == pytest.approx(1.0 - ecdf)
    with pytest.raises(EmptyDraws):
        kaplan_meier_arrays([], [])


def test_logrank():
    p = build_partition(1)
    a = simulate_pwe([1.0], p, 200, seed=1)
    assert logrank(a, a) == pytest.approx(1.0)
    b = simulate_pwe([4.0], p, 200, seed=2)
    assert logrank(a, b) < 0.01


def test_conventional_fit_layout_and_no_events():
    p = build_partition(3)
    data = simulate_pwe([1.0, 1.0, 1.0], p, 60, seed=3, arms={"z_F": 1.0})
    chains = fit_pwe_conventional(data, p, SamplerConfig(chains=2, burn_in=50, iterations=100, seed=1))
    assert chains.names == ["gamma[0]", "gamma[1]", "gamma[2]", "rho[0]", "sigma_gamma"]
    assert chains.meta["treatments"] == ["z_F"]
    with pytest.raises(NoEvents):
        fit_pwe_conventional(_subjects([0.5, 1.0], [0, 0]), p, SMALL)


@pytest.mark.slow
def test_conventional_fit_recovers_constant_hazard():
    p = build_partition(4)
    data = simulate_pwe([2.0] * 4, p, 600, seed=11)
    chains = fit_pwe_conventional(data, p, SMALL)
    rates = np.exp(chains.block("gamma", 4)).mean(axis=0)
    assert np.all(np.abs(rates - 2.0) < 0.3)

    grid = np.linspace(0.0, 1.0, 11)
    curve = survival_curve(chains, None, grid)
    assert curve.mean[0] == 1.0
    assert np.all(np.diff(curve.mean) <= 0.0)
    assert np.all(np.diff(curve.lower) <= 0.0)


@pytest.mark.slow
def test_null_treatment_effect():
    p = build_partition(2)
    data = simulate_pwe([1.5, 1.5], p, 400, seed=19, arms={"z_F": 1.0})
    chains = fit_pwe_conventional(data, p, SMALL)
    rho = chains.pooled("rho[0]")
    assert abs(rho.mean()) < 2.5 * rho.std()


def test_gmc_rejects_bad_sources():
    p = build_partition(2)
    primary = simulate_pwe([1.0, 1.0], p, 50, seed=1, arms={"z_F": 0.8})
    with pytest.raises(NoEvents):
        fit_pwe_gmc(primary, _subjects([0.5], [0], source="supplemental"), SURVIVAL_PRESET["curve"], p, SMALL)
    with pytest.raises(DomainError):
        fit_pwe_gmc(primary, primary, SURVIVAL_PRESET["curve"], p, SMALL)


def test_gmc_layout_and_forced_indicators():
    p = build_partition(3)
    primary = simulate_pwe([1.0] * 3, p, 80, seed=2, arms={"z_F": 0.8})
    supplemental = simulate_pwe([1.0] * 3, p, 80, seed=3, source="supplemental")
    config = SamplerConfig(chains=2, burn_in=50, iterations=150, seed=5)
    chains = fit_pwe_gmc(primary, supplemental, SURVIVAL_PRESET["curve"], p, config, force_indicators="all_zero")
    assert chains.names == ["gamma[0]", "gamma[1]", "gamma[2]", "gamma0[0]", "gamma0[1]", "gamma0[2]", "rho[0]",
                            "sigma_gamma", "sigma_gamma0", "iota[0]", "iota[1]", "iota[2]", "nu_gamma"]
    assert np.all(chains.block("iota", 3) == 0.0)
    assert chains.meta["sources"] == {"primary": "gamma", "supplemental": "gamma0"}
    curve = survival_curve(chains, None, [0.0, 1.0], source="supplemental")
    assert curve.mean[0] == 1.0
    with pytest.raises(UnknownCovariateSetting):
        survival_curve(chains, {"z_F": 1}, [0.5], source="supplemental")


REPLICATE_SEEDS = (101, 202, 303, 404, 505)
TRIAL = SamplerConfig(chains=2, burn_in=500, iterations=1500)
TRIAL_HAZARDS = np.array([3.5, 3.0, 2.8, 2.6, 2.5, 2.4, 2.3, 2.2])


def _trial_sources(seed, supplemental_ratio=1.0):
    """Primary 211 subjects with about 197 events, supplemental 224 with about 172."""
    p = build_partition(8)
    primary = simulate_pwe(TRIAL_HAZARDS, p, 211, seed=seed)
    supplemental = simulate_pwe(supplemental_ratio * TRIAL_HAZARDS, p, 224, seed=seed + 1, source="supplemental",
                                censor_max=1.75)
    return p, primary, supplemental


def test_trial_scale_fixture_event_counts():
    _, primary, supplemental = _trial_sources(REPLICATE_SEEDS[0])
    assert (len(primary), len(supplemental)) == (211, 224)
    assert abs(primary.events - 197) <= 15
    assert abs(supplemental.events - 172) <= 20


@pytest.mark.slow
def test_gmc_borrows_from_matched_source():
    passed = 0
    for seed in REPLICATE_SEEDS:
        p, primary, supplemental = _trial_sources(seed)
        chains = fit_pwe_gmc(primary, supplemental, SURVIVAL_PRESET["curve"], p, TRIAL.model_copy(update={"seed": seed}))
        iota = chains.block("iota", p.K).mean(axis=0)
        passed += chains.pooled("nu_gamma").mean() >= 0.8 and iota.min() >= 0.7
    assert passed >= 4


@pytest.mark.slow
def test_gmc_ignores_discordant_source():
    passed = 0
    for seed in REPLICATE_SEEDS:
        p, primary, supplemental = _trial_sources(seed, supplemental_ratio=3.0)
        chains = fit_pwe_gmc(primary, supplemental, SURVIVAL_PRESET["curve"], p, TRIAL.model_copy(update={"seed": seed}))
        passed += chains.pooled("nu_gamma").mean() <= 0.3
    assert passed >= 4


def _survival_draws(chains, grid, K):
    """S(t) per stored draw, chains x draws x grid."""
    p = build_partition(K)
    gamma = chains.draws[:, :, [chains.index(f"gamma[{k}]") for k in range(K)]]
    return np.exp(-(np.exp(gamma) @ interval_exposure(grid, p).T))


@pytest.mark.slow
def test_all_zero_indicators_reduce_to_the_conventional_fit():
    p = build_partition(4)
    primary = simulate_pwe([1.0, 1.4, 0.8, 1.2], p, 300, seed=51)
    supplemental = simulate_pwe([3.0] * 4, p, 300, seed=52, source="supplemental")
    config = SamplerConfig(chains=2, burn_in=1000, iterations=4000, seed=53)
    gmc = fit_pwe_gmc(primary, supplemental, SURVIVAL_PRESET["curve"], p, config, force_indicators="all_zero")
    conventional = fit_pwe_conventional(primary, p, config)

    grid = np.linspace(0.1, 1.0, 10)
    a, b = _survival_draws(gmc, grid, 4), _survival_draws(conventional, grid, 4)
    for j in range(grid.size):
        se = np.hypot(mc_standard_error(a[:, :, j]), mc_standard_error(b[:, :, j]))
        assert abs(a[:, :, j].mean() - b[:, :, j].mean()) < 4.0 * se + 1e-3

    reduced, reference = survival_curve(gmc, None, grid), survival_curve(conventional, None, grid)
    assert reduced.lower == pytest.approx(reference.lower, abs=0.025)
    assert reduced.upper == pytest.approx(reference.upper, abs=0.025)

    alone = fit_pwe_conventional(primary, p, SMALL)
    grid = np.linspace(0.0, 1.0, 11)
    gmc_curve = survival_curve(gmc, None, grid).mean
    ref_curve = survival_curve(alone, None, grid).mean
    assert np.max(np.abs(gmc_curve - ref_curve)) < 0.05


def test_partition_ranking_ties_and_single_candidate():
    ranked = compare_partitions([("K=4/equal", 10.0, 12.0), ("K=2/equal", 10.0, 12.0)])
    assert [f.label for f in ranked] == ["K=2/equal", "K=4/equal"]

    p = build_partition(2)
    data = simulate_pwe([1.0, 2.0], p, 80, seed=4)
    fits = select_partition_dic(data, [p], SamplerConfig(chains=2, burn_in=50, iterations=200, seed=2))
    assert len(fits) == 1 and fits[0].K == 2 and fits[0].spacing == "equal"


@pytest.mark.slow
def test_partition_dic_prefers_the_generating_partition():
    truth = build_partition(4)
    candidates = [build_partition(1), truth, build_partition(12)]
    wins = 0
    for seed in range(3):
        data = simulate_pwe([0.5, 3.0, 0.5, 3.0], truth, 500, seed=100 + seed)
        fits = select_partition_dic(data, candidates, SMALL)
        order = [f.K for f in fits]
        wins += order.index(4) < order.index(1)
    assert wins == 3

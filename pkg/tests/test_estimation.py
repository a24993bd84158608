import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recoverynet.dynamics import SP_DM_OTHER, DynamicParams, LogisticCurveParams, physical_level
from recoverynet.estimation import (
    ConvergenceError,
    DegenerateFitError,
    FitQualityError,
    ObservationSeries,
    PriorSpec,
    SocialTrajectory,
    fit_generalized_logistic,
    fit_sp_dm,
    log_posterior,
    pearson,
    read_series_csv,
    simulate_aggregate,
)

CURVE = LogisticCurveParams(A=0.4, B=0.55, C=0.15, D=12)
DRIVER = LogisticCurveParams(A=0.6, B=0.3, C=0.15, D=15)


def series(values, start=0):
    return ObservationSeries(tuple(range(start, start + len(values))), tuple(float(v) for v in values))


def curve_series(p, days=range(61), shift=0):
    return ObservationSeries(tuple(d + shift for d in days), tuple(physical_level(d, p) for d in days))


def test_series_validation():
    with pytest.raises(ValueError):
        ObservationSeries((0, 0), (0.1, 0.2))
    with pytest.raises(ValueError):
        ObservationSeries((0, 1), (0.1, 1.6))
    with pytest.raises(ValueError):
        ObservationSeries((-1, 1), (0.1, 0.2))
    with pytest.raises(ValueError):
        ObservationSeries((0, 1), (0.1,))
    assert ObservationSeries.from_pairs([(2, 0.5), (5, 0.6)]).span == 4


def test_pearson_trivial():
    a = [0.1, 0.5, 0.2, 0.9]
    assert pearson(a, a) == pytest.approx(1.0, abs=1e-15)
    assert pearson(a, [-v for v in a]) == pytest.approx(-1.0, abs=1e-15)


def test_pearson_hand_value():
    # Centred: (-1.5,-.5,.5,1.5)·(-1.4,-.6,.7,1.3) = 4.7; sums of squares 5 and 4.5.
    assert pearson([1, 2, 3, 4], [1.1, 1.9, 3.2, 3.8]) == pytest.approx(4.7 / math.sqrt(22.5), abs=1e-12)
    assert pearson([1, 2, 3, 4], [1.1, 1.9, 3.2, 3.8]) == pytest.approx(0.99085, abs=1e-5)


def test_pearson_errors():
    with pytest.raises(ValueError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [2])
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=30), st.integers(0, 2**32 - 1))
def test_pearson_bounded(a, seed):
    b = np.random.default_rng(seed).normal(size=len(a))
    if np.ptp(a) < 1e-6:
        return
    assert -1.0 <= pearson(a, b) <= 1.0


def test_curve_round_trip():
    fit = fit_generalized_logistic(curve_series(CURVE))
    p = fit.params
    for got, want in ((p.A, 0.4), (p.B, 0.55), (p.C, 0.15), (p.D, 12)):
        assert got == pytest.approx(want, abs=1e-3)
    assert fit.rho > 0.9999 and fit.accepted and fit.n == 61


def test_curve_day_shift_moves_only_d():
    base = fit_generalized_logistic(curve_series(CURVE)).params
    moved = fit_generalized_logistic(curve_series(CURVE, shift=25)).params
    assert moved.D - base.D == pytest.approx(25, abs=1e-6)
    for f in ("A", "B", "C"):
        assert getattr(moved, f) == pytest.approx(getattr(base, f), abs=1e-6)


@settings(max_examples=15, deadline=None)
@given(A=st.floats(0.2, 0.7), frac=st.floats(0, 1), C=st.floats(0.08, 0.6), D=st.floats(5, 40))
def test_curve_round_trip_property(A, frac, C, D):
    true = LogisticCurveParams(A, frac * (1 - A), C, D)
    fit = fit_generalized_logistic(curve_series(true))
    assert fit.rho > 0.9999
    assert fit.rmse < 1e-6
    assert fit.params.A + fit.params.B <= 1 + 1e-9


def test_curve_constant_series_names_c():
    with pytest.raises(DegenerateFitError) as e:
        fit_generalized_logistic(series([0.7] * 10))
    assert e.value.parameter == "C"
    assert "C" in str(e.value)


def test_curve_needs_four_points():
    with pytest.raises(ValueError):
        fit_generalized_logistic(series([0.1, 0.5, 0.9]))


def test_curve_quality_gate():
    rng = np.random.default_rng(0)
    noisy = series(np.clip(rng.uniform(0.2, 0.8, 30), 0, 1))
    fit = fit_generalized_logistic(noisy)
    assert not fit.accepted
    with pytest.raises(FitQualityError):
        fit_generalized_logistic(noisy, min_rho=0.95)


def test_read_series_csv(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("day,level\n0,0.25\n3,0.5\n", encoding="utf-8")
    assert read_series_csv(p) == ObservationSeries((0, 3), (0.25, 0.5))
    p.write_text("day,level\n0,abc\n", encoding="utf-8")
    with pytest.raises(ValueError, match="row 2"):
        read_series_csv(p)
    p.write_text("t,r\n0,1\n", encoding="utf-8")
    with pytest.raises(ValueError, match="header"):
        read_series_csv(p)


def test_prior_spec():
    prior = PriorSpec()
    assert prior.log_density([0.1, 0.3, 0.1, 0.7]) == -math.inf
    assert prior.log_density([-0.1, 0.6, 0.1, 0.7]) == -math.inf
    # Half-Cauchy(1) at 0 is 2/pi; uniform density on [0.5, 1] is 2.
    assert prior.log_density([0, 0.6, 0, 0.7]) == pytest.approx(2 * math.log(2 / math.pi) + 2 * math.log(2))
    draws = prior.sample(np.random.default_rng(0), 1000)
    assert np.all(draws[:, [0, 2]] >= 0)
    assert np.all((draws[:, [1, 3]] >= 0.5) & (draws[:, [1, 3]] <= 1.0))
    with pytest.raises(ValueError):
        PriorSpec(beta_scale=0)
    with pytest.raises(ValueError):
        PriorSpec(K_low=0.9, K_high=0.5)


def test_trajectory_matches_constant_driver_rk4():
    # With a constant physical level the trajectory solves an autonomous ODE.
    p = SP_DM_OTHER
    s = series([0.3] * 21)
    traj = SocialTrajectory(s, series([0.8] * 21), 80.0, h=0.01)

    def f(r):
        return 0.001 * p.beta_s * 80 * r * (1 - r / p.K_s) + 0.1 * p.beta_p * 0.8 * (1 - 0.8 / p.K_p)

    r, ref = 0.3, [0.3]
    for _ in range(20):
        for _ in range(100):
            k1 = f(r)
            k2 = f(r + 0.005 * k1)
            k3 = f(r + 0.005 * k2)
            k4 = f(r + 0.01 * k3)
            r += 0.01 / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ref.append(r)
    assert traj((p.beta_s, p.K_s, p.beta_p, p.K_p)) == pytest.approx(ref, abs=1e-12)


def test_trajectory_needs_covering_physical_series():
    with pytest.raises(ValueError):
        SocialTrajectory(series([0.3] * 20), series([0.8] * 10), 80)
    with pytest.raises(ValueError):
        SocialTrajectory(series([0.3] * 20), series([0.8] * 20), 0)


def sp_dm_data(params, r0=0.3, days=60, n_bar=80.0):
    phys = [physical_level(d, DRIVER) for d in range(days + 1)]
    s = simulate_aggregate(params, r0, phys, n_bar, days)
    return series(s), series(phys)


@pytest.fixture(scope="module")
def other_fit():
    s, p = sp_dm_data(SP_DM_OTHER)
    return fit_sp_dm(s, p, 80.0, noise_sigma=5e-4), s, p


def test_sp_dm_round_trip(other_fit):
    fit, _, _ = other_fit
    for f in ("beta_s", "K_s", "beta_p", "K_p"):
        assert getattr(fit.params, f) == pytest.approx(getattr(SP_DM_OTHER, f), rel=0.10)
    assert fit.params.N_bar == 80.0
    d = fit.diagnostics
    assert d["gradient_norm"] <= d["gradient_tol"]
    assert d["starts"] == 16 and 0 <= d["best_start"] < 16
    assert all(v is None for v in d["at_bound"].values())


def test_map_beats_prior_draws(other_fit):
    fit, s, p = other_fit
    traj = SocialTrajectory(s, p, 80.0)
    prior = PriorSpec()
    draws = prior.sample(np.random.default_rng(1), 100)
    best = log_posterior(
        (fit.params.beta_s, fit.params.K_s, fit.params.beta_p, fit.params.K_p), traj, s.y, prior, 5e-4)
    assert best == pytest.approx(fit.log_posterior, rel=1e-12)
    assert all(best >= log_posterior(x, traj, s.y, prior, 5e-4) for x in draws)


def test_sp_dm_deterministic_for_seed_and_workers():
    s, p = sp_dm_data(SP_DM_OTHER, days=30)
    a = fit_sp_dm(s, p, 80.0, noise_sigma=0.01, n_starts=6, seed=3)
    b = fit_sp_dm(s, p, 80.0, noise_sigma=0.01, n_starts=6, seed=3, workers=3)
    assert a.params == b.params and a.diagnostics["best_start"] == b.diagnostics["best_start"]


def test_sp_dm_short_series_rejected():
    s, p = sp_dm_data(SP_DM_OTHER, days=8)
    with pytest.raises(ValueError, match="10"):
        fit_sp_dm(s, p, 80.0)


def test_sp_dm_low_capacity_pinned_and_flagged():
    s, p = sp_dm_data(DynamicParams(0.5, 0.3, 0.2, 0.9), r0=0.1, days=40)
    fit = fit_sp_dm(s, p, 80.0, noise_sigma=0.01)
    assert fit.params.K_s == pytest.approx(0.5, abs=1e-6)
    assert fit.diagnostics["at_bound"]["K_s"] == "lower"


def test_sp_dm_sampler_acceptance_rate():
    s, p = sp_dm_data(SP_DM_OTHER, days=30)
    fit = fit_sp_dm(s, p, 80.0, noise_sigma=0.01, n_starts=6, sample=300)
    assert 0.05 <= fit.diagnostics["acceptance_rate"] <= 0.95
    assert set(fit.diagnostics["posterior_mean"]) == {"beta_s", "K_s", "beta_p", "K_p"}


def test_sp_dm_acceptance_outside_bounds_fails():
    s, p = sp_dm_data(SP_DM_OTHER, days=30)
    with pytest.raises(ConvergenceError) as e:
        fit_sp_dm(s, p, 80.0, noise_sigma=0.01, n_starts=4, sample=100, acceptance_bounds=(0.999, 1.0))
    assert "acceptance_rate" in e.value.diagnostics


def test_sp_dm_gradient_gate_fails():
    s, p = sp_dm_data(SP_DM_OTHER, days=30)
    with pytest.raises(ConvergenceError) as e:
        fit_sp_dm(s, p, 80.0, noise_sigma=0.01, n_starts=2, gradient_tol=-1.0)
    assert "gradient_norm" in e.value.diagnostics

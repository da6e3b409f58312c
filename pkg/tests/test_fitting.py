import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bohmrelax.fitting import (EXP_DECAY, POLY5, FitDomainError, NoDecayError,
                               confidence_intervals, evaluate, fit_exp_decay, fit_report,
                               fit_tau_beta, fit_tau_epsilon, fit_tau_modes, load_fit_csv,
                               save_fit_csv)

T = np.linspace(0, 10, 50)


def test_exp_decay_exact_recovery():
    f = fit_exp_decay(T, 2 * np.exp(-T / 3))
    assert f.converged
    np.testing.assert_allclose(f.params, [2, 3], rtol=1e-8)
    assert f.r_squared == pytest.approx(1.0, abs=1e-12)
    assert np.all(f.ci95 <= 1e-8)


def test_exp_decay_noisy_recovery():
    for seed in range(100):
        h = 2 * np.exp(-T / 3) + np.random.default_rng(seed).normal(0, 0.02, T.size)
        f = fit_exp_decay(T, h)
        assert f.converged
        assert abs(f.params[1] / 3 - 1) <= 0.03


def test_exp_decay_degenerate_inputs():
    with pytest.raises(NoDecayError):
        fit_exp_decay(T, np.full(T.size, 0.7))
    with pytest.raises(NoDecayError):
        fit_exp_decay(T[:4], np.exp(-T[:4]))
    with pytest.raises(NoDecayError):
        fit_exp_decay(T, 0.05 * np.exp(-T), noise_floor=0.1)
    with pytest.raises(ValueError):
        fit_exp_decay(T, np.exp(-T[:10]))


def test_exp_decay_excludes_points_below_floor():
    h = 2 * np.exp(-T / 3)
    f = fit_exp_decay(T, h, noise_floor=0.1)
    assert f.n_points == int(np.sum(h > 0.1))
    assert f.extra["excluded"] == T.size - f.n_points
    np.testing.assert_allclose(f.params, [2, 3], rtol=1e-8)


@settings(max_examples=30, deadline=None)
@given(h0=st.floats(0.3, 5), tau=st.floats(1, 40), shift=st.floats(-3, 3))
def test_exp_decay_time_shift(h0, tau, shift):
    noise = np.random.default_rng(1).normal(0, 0.01 * h0, T.size)
    h = h0 * np.exp(-T / tau) + noise
    a = fit_exp_decay(T, h)
    b = fit_exp_decay(T + shift, h)
    assert b.params[1] == pytest.approx(a.params[1], rel=1e-8)
    assert b.params[0] == pytest.approx(a.params[0] * np.exp(shift / a.params[1]), rel=1e-8)


def test_inverse_epsilon_exact():
    e = np.array([0.5, 0.25, 0.2, 0.125, 0.1])
    f = fit_tau_epsilon(e, 0.5 / e + 1)
    np.testing.assert_allclose(f.params, [0.5, 1.0], rtol=1e-12)
    assert np.all(f.ci95 <= 1e-10)


def test_inverse_epsilon_duplicates_average():
    e = np.array([0.5, 0.5, 0.25, 0.2])
    tau = np.array([2.0, 4.0, 5.0, 6.0])
    f = fit_tau_epsilon(e, tau)
    X = np.column_stack([1 / e, np.ones(4)])
    np.testing.assert_allclose(f.params, np.linalg.lstsq(X, tau, rcond=None)[0], rtol=1e-12)
    with pytest.raises(FitDomainError):
        fit_tau_epsilon([0.5, 0.25, 0.5], [1, 2, 3])
    with pytest.raises(FitDomainError):
        fit_tau_epsilon([0.5, 0.25, -0.2], [1, 2, 3])


def test_modes_exact_recovery():
    m = np.arange(4, 16.0)
    f = fit_tau_modes(m, 4 * np.exp(-m / 3) + 0.5)
    assert f.converged
    np.testing.assert_allclose(f.params, [4, 3, 0.5], rtol=1e-6)
    with pytest.raises(FitDomainError):
        fit_tau_modes([4, 6, 9], [3, 2, 1])


def test_modes_decreasing_fit_on_noisy_data():
    m = np.array([4, 6, 9, 12, 15.0])
    tau = 30 * np.exp(-m / 4) + 5 + np.array([0.3, -0.2, 0.1, -0.1, 0.05])
    f = fit_tau_modes(m, tau)
    assert f.converged and f.params[0] > 0 and f.params[1] > 0
    assert np.all(np.diff(f(np.linspace(4, 15, 30))) < 0)


def test_poly5_exact_recovery():
    rng = np.random.default_rng(0)
    grid = np.linspace(0.02, 0.10, 9)
    for _ in range(50):
        # coefficients sized for beta <= 0.1 so every term contributes comparably
        c = rng.normal(size=6) * 0.1 ** -np.arange(6.0)
        f = fit_tau_beta(grid, np.polynomial.polynomial.polyval(grid, c))
        assert np.max(np.abs(f.params - c) / np.abs(c)) <= 1e-9


def test_poly5_constant_and_domain():
    grid = np.linspace(0.02, 0.10, 6)
    f = fit_tau_beta(grid, np.full(6, 2.5))
    assert f.params[0] == pytest.approx(2.5, rel=1e-10)
    assert np.all(np.abs(f.params[1:] * 0.1 ** np.arange(1, 6)) <= 1e-9)
    with pytest.raises(FitDomainError):
        fit_tau_beta(grid[:5], np.ones(5))


def test_r_squared_definition():
    y = np.array([1.0, 2.0, 2.5, 4.2, 4.9, 6.3])
    x = np.arange(6.0) + 1
    f = fit_tau_epsilon(1 / x, y)  # linear in x
    resid = y - f(1 / x)
    assert f.r_squared == pytest.approx(1 - resid @ resid / np.sum((y - y.mean()) ** 2))
    assert f.r_squared <= 1


def test_ci_singular_and_saturated():
    J = np.column_stack([np.ones(5), np.ones(5)])
    hw, cov, unbounded = confidence_intervals(J, np.arange(5.0))
    assert unbounded and np.all(np.isinf(hw)) and cov is None
    hw, _, unbounded = confidence_intervals(np.eye(2), np.zeros(2))
    assert unbounded


@pytest.mark.slow
def test_ci_coverage():
    hits = 0
    for seed in range(500):
        h = 2 * np.exp(-T / 3) + np.random.default_rng(seed).normal(0, 0.02, T.size)
        f = fit_exp_decay(T, h)
        assert f.converged
        hits += abs(f.params[1] - 3) <= f.ci95[1]
    assert 0.90 <= hits / 500 <= 0.99


def test_evaluate_and_unknown_family():
    assert evaluate(EXP_DECAY, [2, 1], 0.0) == 2.0
    assert evaluate(POLY5, [1, 1, 0, 0, 0, 0], 2.0) == 3.0
    with pytest.raises(ValueError):
        evaluate("spline", [1], 1.0)


def test_csv_round_trip_and_report(tmp_path):
    f = fit_exp_decay(T, 2 * np.exp(-T / 3) + np.random.default_rng(0).normal(0, 0.02, 50))
    save_fit_csv(tmp_path / "fit.csv", f)
    g = load_fit_csv(tmp_path / "fit.csv")
    np.testing.assert_array_equal(g.params, f.params)
    np.testing.assert_array_equal(g.ci95, f.ci95)
    assert g.r_squared == f.r_squared and g.n_points == 50 and g.converged
    text = fit_report(f)
    assert "tau = " in text and "r_squared" in text

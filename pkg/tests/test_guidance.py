import math

import numpy as np
import pytest

from bohmrelax.ensemble import EnsembleConfig, sample_initial
from bohmrelax.guidance import (CONVERGED, LADDER_EXHAUSTED, VELOCITY_SINGULAR,
                                IntegratorConfig, VelocitySingular, integrate_ladder,
                                integrate_trajectory, velocity)
from bohmrelax.modes import PhysicalParams, solve_g
from bohmrelax.wavefunction import (SuperpositionState, from_normal, generate_state, psi_total,
                                    psi_total_grad, to_normal)
from oracles import VelocityOracle, rk4_fixed

TIMES = np.linspace(0, 9.99, 50)


@pytest.fixture(scope="module")
def sols01():
    p = PhysicalParams(beta=0.1)
    return solve_g(p, 1), solve_g(p, 2)


@pytest.fixture(scope="module")
def sols0():
    p = PhysicalParams(beta=0.0)
    return solve_g(p, 1), solve_g(p, 2)


GROUND = SuperpositionState((0,), (0,), (0.0,))


def test_config_ladder_and_validation():
    cfg = IntegratorConfig()
    tols = cfg.ladder()
    assert tols[0] == 1e-5 and len(tols) == 11
    assert tols[-1] == pytest.approx(1e-15)
    with pytest.raises(ValueError):
        IntegratorConfig(tol_start=1e-10, tol_floor=1e-5)
    with pytest.raises(ValueError):
        IntegratorConfig(ladder_cutoff=0)


def test_ground_state_velocity_vanishes(sols0):
    for t in (0.0, 1.0, 7.5):
        v = velocity(GROUND, *sols0, (0.4, -1.2), t)
        assert v == pytest.approx((0.0, 0.0), abs=1e-15)


def test_ground_state_trajectory_is_static(sols0):
    res = integrate_trajectory(GROUND, *sols0, (0.7, -0.3), np.linspace(0, 10, 50))
    assert res.status == CONVERGED
    np.testing.assert_allclose(res.positions, np.tile([0.7, -0.3], (50, 1)), atol=1e-14)


def test_two_mode_closed_form(sols0):
    # Psi ~ phi0(x1) e^{-it/2} (1 + sqrt2 x1 e^{-it}) phi0(x2): v1(0, x2) = -sqrt2 sin t, v2 = 0
    state = SuperpositionState((0, 1), (0, 0), (0.0, 0.0))
    for t in (0.0, 0.4, 1.0, 2.3):
        v1, v2 = velocity(state, *sols0, (0.0, 0.8), t)
        assert v1 == pytest.approx(-math.sqrt(2) * math.sin(t), abs=1e-13)
        assert v2 == pytest.approx(0.0, abs=1e-13)
    # off axis: v1 = Im(-x + sqrt2 e^{-it} / (1 + sqrt2 x e^{-it}))
    x, t = 0.6, 1.1
    z = math.sqrt(2) * np.exp(-1j * t)
    v1, _ = velocity(state, *sols0, (x, 0.3), t)
    assert v1 == pytest.approx((z / (1 + z * x)).imag, abs=1e-13)


def test_velocity_is_current_over_density(sols01):
    state = generate_state(9, 4)
    rng = np.random.default_rng(2)
    p = rng.uniform(-2.5, 2.5, (2, 40))
    psi = psi_total(state, *sols01, p, 3.2)
    g1, g2 = psi_total_grad(state, *sols01, p, 3.2)
    rho = np.abs(psi) ** 2
    v1, v2 = velocity(state, *sols01, p, 3.2)
    np.testing.assert_allclose(v1, (np.conj(psi) * g1).imag / rho, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(v2, (np.conj(psi) * g2).imag / rho, rtol=1e-10, atol=1e-12)


def test_velocity_singular_far_out(sols0):
    with pytest.raises(VelocitySingular):
        velocity(GROUND, *sols0, (12.0, 0.0), 0.0)


def test_singular_start_is_flagged(sols0):
    res = integrate_ladder(GROUND, *sols0, [(0.1, 0.1), (12.0, 0.0)], TIMES)
    assert list(res.status) == [CONVERGED, VELOCITY_SINGULAR]
    assert np.all(np.isnan(res.positions[1]))


def test_ladder_monotonicity_and_bracketing(sols01):
    state = generate_state(9, 6)
    rng = np.random.default_rng(5)
    starts = rng.normal(0, 0.7, (40, 2))
    cfg = IntegratorConfig()
    res = integrate_ladder(state, *sols01, starts, TIMES, cfg)
    assert res.counts()[CONVERGED] == 40
    for p, tol in zip(starts, res.final_tolerance):
        k = math.log10(cfg.tol_start / tol)
        assert k >= 1 and abs(k - round(k)) < 1e-9
    # the two bracketing rungs reproduce the reported positions
    i = 0
    tight = res.final_tolerance[i]
    # a single-rung ladder has nothing to compare against and reports exhaustion
    single = integrate_ladder(state, *sols01, starts[i:i + 1], TIMES,
                              IntegratorConfig(tol_start=tight, tol_floor=tight))
    assert single.status[0] == LADDER_EXHAUSTED
    pair = integrate_ladder(state, *sols01, starts[i:i + 1], TIMES,
                            IntegratorConfig(tol_start=tight * 10, tol_floor=tight))
    assert pair.status[0] == CONVERGED
    np.testing.assert_array_equal(pair.positions[0], res.positions[i])


def test_ladder_exhaustion_is_reported(sols01):
    state = generate_state(15, 1)
    cfg = IntegratorConfig(tol_start=1e-2, tol_floor=1e-3, ladder_cutoff=1e-12)
    res = integrate_ladder(state, *sols01, [(0.3, 0.2)], TIMES, cfg)
    assert res.status[0] == LADDER_EXHAUSTED
    assert np.isnan(res.final_tolerance[0])


def test_determinism(sols01):
    state = generate_state(12, 9)
    starts = np.random.default_rng(1).normal(0, 0.7, (10, 2))
    a = integrate_ladder(state, *sols01, starts, TIMES)
    b = integrate_ladder(state, *sols01, starts, TIMES)
    assert a.positions.tobytes() == b.positions.tobytes()
    np.testing.assert_array_equal(a.final_tolerance, b.final_tolerance)


def test_rejects_times_past_horizon(sols01):
    with pytest.raises(Exception):
        integrate_ladder(generate_state(4, 0), *sols01, [(0, 0)], [0.0, 10.5])
    with pytest.raises(ValueError):
        integrate_ladder(generate_state(4, 0), *sols01, [(0, 0)], [0.0, 2.0, 1.0])


@pytest.mark.slow
def test_fixed_step_rk4_oracle(sols01):
    state = generate_state(4, 21)
    start = (0.45, -0.35)
    t_out = np.linspace(0, 9.99, 10)
    res = integrate_trajectory(state, *sols01, start, t_out)
    assert res.status == CONVERGED

    h = 1e-4
    rhs = VelocityOracle(state.n1, state.n2, state.coefficients, 0.1, 9.99, h / 2)
    y0 = np.array(to_normal(start))
    ref = rk4_fixed(rhs, y0, 0.0, 9.99, h, t_out)
    xa, xb = from_normal((ref[:, 0], ref[:, 1]))
    assert np.max(np.abs(res.positions - np.stack([xa, xb], axis=1))) <= 5e-3


def test_time_reversal_at_zero_coupling(sols0):
    state = generate_state(4, 13)
    starts = np.random.default_rng(8).normal(0, 0.7, (20, 2))
    fwd = integrate_ladder(state, *sols0, starts, np.linspace(0, 8, 20))
    assert np.all(fwd.converged)
    back = integrate_ladder(state, *sols0, fwd.positions[:, -1], np.linspace(8, 0, 20))
    assert np.all(back.converged)
    assert np.max(np.abs(back.positions[:, -1] - starts)) <= 10 * 0.0025


def test_nonconverged_fraction_small(sols01):
    state = generate_state(15, 3)
    cfg = EnsembleConfig(n_particles=400, seed=5)
    res = integrate_ladder(state, *sols01, sample_initial(cfg), TIMES)
    assert np.mean(~res.converged) <= 0.01

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bohmrelax.modes import PhysicalParams, solve_g
from bohmrelax.wavefunction import (MAX_MODES, PointAB, SuperpositionState, born_density,
                                    from_normal, generate_state, psi_total, psi_total_grad,
                                    shell_pairs, to_normal)
from oracles import psi_mode_ode


@pytest.fixture(scope="module")
def sols01():
    p = PhysicalParams(beta=0.1)
    return solve_g(p, 1), solve_g(p, 2)


@pytest.fixture(scope="module")
def sols0():
    p = PhysicalParams(beta=0.0)
    return solve_g(p, 1), solve_g(p, 2)


def shells(state):
    return sorted(a + b for a, b in zip(state.n1, state.n2))


def test_generate_state_shell_filling():
    s1 = generate_state(1, 3)
    assert list(zip(s1.n1, s1.n2)) == [(0, 0)]
    s9 = generate_state(9, 3)
    assert shells(s9) == [0, 1, 1, 2, 2, 2, 3, 3, 3]
    s15 = generate_state(15, 3)
    assert set(zip(s15.n1, s15.n2)) == {p for s in range(5) for p in shell_pairs(s)}
    np.testing.assert_allclose(np.abs(s9.coefficients), 1 / 3, rtol=1e-15)


def test_every_m9_exemplar_is_reachable():
    seen = set()
    for seed in range(60):
        st9 = generate_state(9, seed)
        seen.add(frozenset(p for p in zip(st9.n1, st9.n2) if sum(p) == 3))
    assert len(seen) == 4  # all 3-of-4 choices from the top shell occur


def test_generate_state_determinism_and_range():
    a, b = generate_state(12, 42), generate_state(12, 42)
    assert a == b
    assert generate_state(12, 43).theta != a.theta
    with pytest.raises(ValueError):
        generate_state(0, 1)
    with pytest.raises(ValueError):
        generate_state(MAX_MODES + 1, 1)


@settings(max_examples=40, deadline=None)
@given(M=st.integers(1, MAX_MODES), seed=st.integers(0, 2 ** 32))
def test_generated_states_are_valid(M, seed):
    s = generate_state(M, seed)
    assert s.M == M
    assert len(set(zip(s.n1, s.n2))) == M
    assert all(0 <= th < 1 for th in s.theta)
    occ = shells(s)
    top = occ[-1]
    for k in range(top):
        assert occ.count(k) == k + 1


def test_state_text_round_trip():
    s = generate_state(15, 7)
    assert SuperpositionState.from_text(s.to_text()) == s
    with pytest.raises(ValueError):
        SuperpositionState.from_text("M = 3\n0 0 0.1\n")


def test_state_validation():
    with pytest.raises(ValueError):
        SuperpositionState((0, 0), (1, 1), (0.1, 0.2))
    with pytest.raises(ValueError):
        SuperpositionState((0,), (0,), (1.0,))
    with pytest.raises(ValueError):
        SuperpositionState((-1,), (0,), (0.0,))


def test_normal_coordinate_examples():
    p = to_normal(PointAB(1.0, 1.0))
    assert p.x1 == pytest.approx(math.sqrt(2), abs=1e-15)
    assert p.x2 == 0.0
    assert tuple(to_normal((0.0, 0.0))) == (0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(xa=st.floats(-50, 50), xb=st.floats(-50, 50))
def test_normal_round_trip(xa, xb):
    back = from_normal(to_normal((xa, xb)))
    assert abs(back.xa - xa) <= 1e-14 * max(1, abs(xa) + abs(xb))
    assert abs(back.xb - xb) <= 1e-14 * max(1, abs(xa) + abs(xb))


def test_ground_state_closed_form(sols0):
    s = SuperpositionState((0,), (0,), (0.0,))
    xa, xb = np.meshgrid(np.linspace(-3, 3, 21), np.linspace(-3, 3, 21))
    psi = psi_total(s, *sols0, to_normal((xa, xb)), 0.0)
    np.testing.assert_allclose(psi, np.exp(-(xa ** 2 + xb ** 2) / 2) / math.sqrt(math.pi),
                               atol=1e-15)
    np.testing.assert_allclose(born_density(s, *sols0, (xa, xb), 0.0),
                               np.exp(-(xa ** 2 + xb ** 2)) / math.pi, atol=1e-15)
    assert psi_total_grad(s, *sols0, (0.0, 0.0), 0.0) == (0, 0)


def _box_integral(state, sols, t, half=5.0, n=400):
    h = 2 * half / n
    c = -half + h * (np.arange(n) + 0.5)  # midpoint rule
    xa, xb = np.meshgrid(c, c, indexing="ij")
    return born_density(state, *sols, (xa, xb), t).sum() * h * h


def test_born_integrates_to_one_in_box(sols01):
    assert _box_integral(generate_state(9, 1), sols01, 0.0) == pytest.approx(1.0, abs=1e-4)


def test_normalization_in_time(sols01):
    state = generate_state(15, 2)
    for t in np.linspace(0, sols01[1].t_end, 50):
        assert abs(_box_integral(state, sols01, t, half=8.0, n=320) - 1) <= 1e-3


def test_matches_resummation_oracle(sols01):
    state = generate_state(4, 11)
    rng = np.random.default_rng(0)
    x1, x2 = rng.uniform(-3, 3, (2, 25))
    ref = sum(c * psi_mode_ode(0.1, 1, a, x1, 0.3) * psi_mode_ode(0.1, 2, b, x2, 0.3)
              for c, a, b in zip(state.coefficients, state.n1, state.n2))
    np.testing.assert_allclose(psi_total(state, *sols01, (x1, x2), 0.3), ref, rtol=0,
                               atol=1e-10)


def test_phase_covariance(sols01):
    state = generate_state(9, 5)
    shifted = state.with_phase_shift(0.37)
    rng = np.random.default_rng(1)
    p = rng.uniform(-3, 3, (2, 50))
    a = psi_total(state, *sols01, p, 2.0)
    b = psi_total(shifted, *sols01, p, 2.0)
    np.testing.assert_allclose(np.abs(a) ** 2, np.abs(b) ** 2, atol=1e-12)
    ratio = b / a
    np.testing.assert_allclose(ratio, np.exp(2j * np.pi * 0.37), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(x1=st.floats(-3, 3), x2=st.floats(-3, 3), t=st.floats(0, 9.9), seed=st.integers(0, 99))
def test_gradient_finite_difference(sols01, x1, x2, t, seed):
    state = generate_state(6, seed)
    h = 1e-5
    g1, g2 = psi_total_grad(state, *sols01, (x1, x2), t)
    f = lambda a, b: psi_total(state, *sols01, (a, b), t)
    fd1 = (f(x1 + h, x2) - f(x1 - h, x2)) / (2 * h)
    fd2 = (f(x1, x2 + h) - f(x1, x2 - h)) / (2 * h)
    scale = max(abs(g1), abs(g2), abs(f(x1, x2)), 1e-3)
    assert abs(fd1 - g1) <= 1e-6 * scale
    assert abs(fd2 - g2) <= 1e-6 * scale


def test_density_gradient_identity(sols01):
    state = generate_state(9, 8)
    rng = np.random.default_rng(3)
    h = 1e-5
    for x1, x2 in rng.uniform(-2.5, 2.5, (20, 2)):
        psi = psi_total(state, *sols01, (x1, x2), 1.3)
        g1, g2 = psi_total_grad(state, *sols01, (x1, x2), 1.3)
        rho = lambda a, b: abs(psi_total(state, *sols01, (a, b), 1.3)) ** 2
        fd1 = (rho(x1 + h, x2) - rho(x1 - h, x2)) / (2 * h)
        fd2 = (rho(x1, x2 + h) - rho(x1, x2 - h)) / (2 * h)
        assert 2 * (np.conj(psi) * g1).real == pytest.approx(fd1, abs=1e-8)
        assert 2 * (np.conj(psi) * g2).real == pytest.approx(fd2, abs=1e-8)

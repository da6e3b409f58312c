import numpy as np
import pytest

from bohmrelax import kernels
from bohmrelax.guidance import velocity
from bohmrelax.modes import PhysicalParams, solve_g
from bohmrelax.wavefunction import generate_state

pytestmark = pytest.mark.skipif(kernels.backend_name("numba") != "numba",
                                reason="numba not importable")


@pytest.fixture(scope="module")
def model_and_state():
    p = PhysicalParams(beta=0.1)
    sols = solve_g(p, 1), solve_g(p, 2)
    state = generate_state(15, 17)
    return kernels.build_model(state, *sols), state, sols


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_velocity_points_backends_agree(model_and_state):
    model, state, sols = model_and_state
    rng = np.random.default_rng(0)
    x1, x2 = rng.uniform(-4, 4, (2, 500))
    t = rng.uniform(0, 9.99, 500)
    a = kernels.velocity_points(model, x1, x2, t, backend="numba")
    b = kernels.velocity_points(model, x1, x2, t, backend="numpy")
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-13)
    # and both agree with the generic evaluator
    for i in range(0, 500, 50):
        v1, v2 = velocity(state, *sols, (x1[i], x2[i]), t[i])
        assert a[0][i] == pytest.approx(v1, rel=1e-7, abs=1e-9)
        assert a[1][i] == pytest.approx(v2, rel=1e-7, abs=1e-9)


def test_integrate_batch_backends_agree(model_and_state):
    model, _, _ = model_and_state
    y0 = np.random.default_rng(1).normal(0, 0.7, (30, 2))
    t_out = np.linspace(0, 3.0, 8)
    kw = dict(max_step=np.inf, h_min=1e-12, max_steps=100000, floor=1e-28)
    pa, sa, na = kernels.integrate_batch(model, y0, t_out, 1e-8, backend="numba", **kw)
    pb, sb, nb = kernels.integrate_batch(model, y0, t_out, 1e-8, backend="numpy", **kw)
    np.testing.assert_array_equal(sa, sb)
    np.testing.assert_allclose(pa, pb, atol=1e-7)
    assert np.max(np.abs(na - nb)) <= 0.02 * np.max(na)


def test_step_limit_status(model_and_state):
    model, _, _ = model_and_state
    for backend in ("numba", "numpy"):
        _, status, steps = kernels.integrate_batch(
            model, [[0.2, 0.1]], np.linspace(0, 5, 4), 1e-12, max_step=np.inf, h_min=1e-12,
            max_steps=5, floor=1e-28, backend=backend)
        assert status[0] == kernels.STATUS_STEP_LIMIT
        assert steps[0] == 5

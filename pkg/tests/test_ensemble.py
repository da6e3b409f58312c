import csv
import json
import math

import numpy as np
import pytest
from scipy.special import ndtr

from bohmrelax.ensemble import (EQUILIBRIUM, EnsembleAbort, EnsembleConfig, SamplingError,
                                evolve_ensemble, export_csv, load_snapshots, output_times,
                                sample_initial, save_snapshots)
from bohmrelax.modes import PhysicalParams, solve_g
from bohmrelax.wavefunction import SuperpositionState, generate_state

GROUND = SuperpositionState((0,), (0,), (0.0,))


@pytest.fixture(scope="module")
def sols0():
    p = PhysicalParams(beta=0.0)
    return solve_g(p, 1), solve_g(p, 2)


@pytest.fixture(scope="module")
def sols01():
    p = PhysicalParams(beta=0.1)
    return solve_g(p, 1), solve_g(p, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(n_particles=-1)
    with pytest.raises(ValueError):
        EnsembleConfig(n_particles=5, sampler="uniform")
    with pytest.raises(ValueError):
        EnsembleConfig(n_particles=5, gaussian_sigma=0)


def test_output_times():
    t = output_times(EnsembleConfig(10), PhysicalParams(beta=0.1))
    assert t.size == 50 and t[0] == 0.0 and t[-1] == pytest.approx(9.99)
    assert np.max(np.abs(np.diff(t) - t[-1] / 49)) <= 1e-12
    assert output_times(EnsembleConfig(10), PhysicalParams(beta=0.05))[-1] == 10.0
    with pytest.raises(ValueError):
        output_times(EnsembleConfig(10, t_max=10.0), PhysicalParams(beta=0.1))


def test_gaussian_moments():
    n = 20000
    cfg = EnsembleConfig(n, seed=4)
    x = sample_initial(cfg)
    sigma = cfg.gaussian_sigma
    assert x.shape == (n, 2)
    assert np.all(np.abs(x.mean(axis=0)) <= 4 * sigma / math.sqrt(n))
    np.testing.assert_allclose(x.var(axis=0), sigma ** 2, rtol=0.05)
    assert np.all((x >= -5) & (x <= 5))


def test_gaussian_truncated_to_box():
    cfg = EnsembleConfig(2000, seed=1, gaussian_center=(4.5, -4.5), gaussian_sigma=1.0)
    x = sample_initial(cfg)
    assert np.all((x >= -5) & (x <= 5))


def test_empty_sample():
    assert sample_initial(EnsembleConfig(0)).shape == (0, 2)


def test_prefix_property(sols01):
    cfg = EnsembleConfig(200, seed=9)
    np.testing.assert_array_equal(sample_initial(cfg, n=80), sample_initial(cfg)[:80])
    eq = EnsembleConfig(120, sampler=EQUILIBRIUM, seed=9)
    state = generate_state(9, 2)
    np.testing.assert_array_equal(sample_initial(eq, state, *sols01, n=50),
                                  sample_initial(eq, state, *sols01)[:50])


def test_equilibrium_requires_state():
    with pytest.raises(ValueError):
        sample_initial(EnsembleConfig(5, sampler=EQUILIBRIUM))


def test_pathological_proposal_rejected(sols0):
    # the ground state fills a vanishing fraction of a huge box, so almost nothing is accepted
    cfg = EnsembleConfig(5, sampler=EQUILIBRIUM, box=(-5000.0, 5000.0))
    with pytest.raises(SamplingError):
        sample_initial(cfg, GROUND, *sols0)


def _quadrant_ks(x, y):
    """Largest quadrant-count discrepancy against the product N(0, 1/2) CDF."""
    fx, fy = ndtr(x * math.sqrt(2)), ndtr(y * math.sqrt(2))
    le_x = x[None, :] <= x[:, None]
    le_y = y[None, :] <= y[:, None]
    n = x.size
    d = 0.0
    for qx, qy, cx, cy in ((le_x, le_y, fx, fy), (le_x, ~le_y, fx, 1 - fy),
                           (~le_x, le_y, 1 - fx, fy), (~le_x, ~le_y, 1 - fx, 1 - fy)):
        emp = (qx & qy).sum(axis=1) / n
        d = max(d, np.max(np.abs(emp - cx * cy)))
    return d


def test_equilibrium_ground_state_ks(sols0):
    n = 800
    x = sample_initial(EnsembleConfig(n, sampler=EQUILIBRIUM, seed=12), GROUND, *sols0)
    d = _quadrant_ks(x[:, 0], x[:, 1])
    rng = np.random.default_rng(77)
    null = [_quadrant_ks(*rng.normal(0, math.sqrt(0.5), (2, n))) for _ in range(199)]
    p_value = (1 + sum(v >= d for v in null)) / 200
    assert p_value > 0.01


def test_static_field_keeps_sample(sols0):
    cfg = EnsembleConfig(50, seed=3, t_max=10.0)
    snaps = evolve_ensemble(cfg, GROUND, *sols0)
    start = sample_initial(cfg)
    assert snaps.dropped == 0
    for j in range(snaps.times.size):
        # only the normal-coordinate round trip perturbs the positions, at the ulp level
        np.testing.assert_allclose(snaps.positions[:, j], start, rtol=0, atol=1e-14)


def test_snapshot_round_trip_and_determinism(tmp_path, sols01):
    cfg = EnsembleConfig(40, seed=8)
    state = generate_state(9, 1)
    a = evolve_ensemble(cfg, state, *sols01)
    b = evolve_ensemble(cfg, state, *sols01)
    save_snapshots(tmp_path / "a.snap", a)
    save_snapshots(tmp_path / "b.snap", b)
    assert (tmp_path / "a.snap").read_bytes() == (tmp_path / "b.snap").read_bytes()
    back = load_snapshots(tmp_path / "a.snap")
    assert back.positions.tobytes() == a.positions.tobytes()
    np.testing.assert_array_equal(back.times, a.times)
    np.testing.assert_array_equal(back.particle_ids, a.particle_ids)
    assert back.manifest["state"] == state.to_text()
    assert json.loads((tmp_path / "a.manifest.json").read_text())["ensemble"]["seed"] == 8
    assert np.all(np.isfinite(back.positions))


def test_prefix_of_snapshots(sols01):
    cfg = EnsembleConfig(30, seed=2)
    snaps = evolve_ensemble(cfg, generate_state(4, 1), *sols01)
    sub = snaps.prefix(10)
    assert sub.n_requested == 10
    assert np.all(sub.particle_ids < 10)
    small = evolve_ensemble(EnsembleConfig(10, seed=2), generate_state(4, 1), *sols01)
    assert small.positions.tobytes() == sub.positions.tobytes()


def test_export_csv(tmp_path, sols0):
    snaps = evolve_ensemble(EnsembleConfig(3, seed=1, n_output_times=4), GROUND, *sols0)
    export_csv(tmp_path / "s.csv", snaps)
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["t", "particle_id", "x_a", "x_b"]
    assert len(rows) == 1 + 3 * 4
    assert float(rows[1][2]) == snaps.positions[0, 0, 0]


def test_abort_on_too_many_failures(sols0):
    cfg = EnsembleConfig(2, max_drop_fraction=0.01)
    with pytest.raises(EnsembleAbort):
        evolve_ensemble(cfg, GROUND, *sols0, starts=np.array([[0.1, 0.1], [12.0, 0.0]]))
    ok = evolve_ensemble(EnsembleConfig(2, max_drop_fraction=0.5), GROUND, *sols0,
                         starts=np.array([[0.1, 0.1], [12.0, 0.0]]))
    assert ok.dropped == 1 and list(ok.particle_ids) == [0]

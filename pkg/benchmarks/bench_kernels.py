"""Time the numba and numpy kernel backends on the same workload.

    python benchmarks/bench_kernels.py [--modes 15] [--points 20000] [--particles 200]

Numba compilation happens in a warm-up call and is not counted.
"""
import argparse
import time

import numpy as np

from bohmrelax import kernels
from bohmrelax.ensemble import EnsembleConfig, sample_initial
from bohmrelax.modes import PhysicalParams, solve_g
from bohmrelax.wavefunction import generate_state, to_normal


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--modes", type=int, default=15)
    ap.add_argument("--points", type=int, default=20000)
    ap.add_argument("--particles", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--tol", type=float, default=1e-8)
    args = ap.parse_args(argv)

    p = PhysicalParams(beta=0.1)
    model = kernels.build_model(generate_state(args.modes, 1), solve_g(p, 1), solve_g(p, 2))
    rng = np.random.default_rng(0)
    x1, x2 = rng.uniform(-3, 3, (2, args.points))
    t = rng.uniform(0, 9.99, args.points)
    start = sample_initial(EnsembleConfig(args.particles, seed=1))
    y0 = np.column_stack(to_normal((start[:, 0], start[:, 1])))
    t_out = np.linspace(0, 9.99, 50)
    kw = dict(max_step=np.inf, h_min=1e-12, max_steps=1_000_000, floor=1e-28)

    backends = ["numpy"]
    if kernels.backend_name("numba") == "numba":
        backends.insert(0, "numba")
    results = {}
    for name in backends:
        def vel():
            kernels.velocity_points(model, x1, x2, t, backend=name)

        def integ():
            kernels.integrate_batch(model, y0, t_out, args.tol, backend=name, **kw)

        vel()
        kernels.integrate_batch(model, y0[:2], t_out[:3], args.tol, backend=name, **kw)
        results[name] = (best_of(vel, args.repeat), best_of(integ, args.repeat))

    print(f"M={args.modes}, {args.points} velocity points, {args.particles} trajectories "
          f"to t=9.99 at atol={args.tol:g}, best of {args.repeat}")
    print(f"{'backend':<8} {'velocity [s]':>13} {'integrate [s]':>14} {'ms/trajectory':>14}")
    for name, (tv, ti) in results.items():
        print(f"{name:<8} {tv:13.4f} {ti:14.3f} {1e3 * ti / args.particles:14.2f}")
    if len(results) == 2:
        (av, ai), (bv, bi) = results["numba"], results["numpy"]
        print(f"numba speed-up: velocity x{bv / av:.1f}, integrate x{bi / ai:.1f}")


if __name__ == "__main__":
    main()

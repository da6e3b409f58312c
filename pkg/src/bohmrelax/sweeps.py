"""Preset-averaged runs, parameter sweeps, equivariance checks and figures.

Output tree of a run directory::

    manifest.json            every parameter and seed needed for replay
    hseries_mean.csv         preset-averaged H(t) with metadata header
    fit_exp_decay.csv        fitted H0, tau with 95% half-widths
    fit_report.txt
    preset_NN/state.txt      quantum numbers and phases
    preset_NN/hseries.csv
    preset_NN/snapshots.bin  (+ snapshots.manifest.json) when snapshots are kept

A sweep directory holds ``sweep_table.csv``, ``fit_<family>.csv``,
``fit_report.txt``, ``manifest.json`` and one run directory per value.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .coarse import CoarseGrid, HSeries, average_series, h_series, load_hseries_csv, \
    noise_floor, save_hseries_csv
from .ensemble import (EQUILIBRIUM, NONEQUILIBRIUM, EnsembleConfig,
                       evolve_ensemble, save_snapshots)
from .fitting import (EXP_DECAY, FitResult, evaluate, fit_exp_decay, fit_report, fit_tau_beta,
                      fit_tau_epsilon, fit_tau_modes, load_fit_csv, save_fit_csv)
from .guidance import IntegratorConfig
from .kernels import backend_name
from .modes import PhysicalParams, solve_g
from .wavefunction import SuperpositionState, generate_state

__all__ = [
    "RunConfig",
    "RunResult",
    "SweepSpec",
    "SweepResult",
    "PlotError",
    "CELLS_PER_PARTICLE",
    "DESK_CAP",
    "particles_for",
    "preset_seeds",
    "run_single",
    "run_sweep",
    "equivariance_check",
    "emit_plots",
]

log = logging.getLogger(__name__)

CELLS_PER_PARTICLE = 0.0125
DESK_CAP = 10_000
AXES = ("epsilon", "modes", "beta")


class PlotError(FileNotFoundError):
    """Requested figures lack the artifacts they are built from."""


def particles_for(epsilon: float, cap: int | None = None, box=(-5.0, 5.0)) -> int:
    """N giving cells/N = 0.0125 on the box, optionally capped."""
    cells = CoarseGrid(epsilon, box).n_cells
    n = int(round(cells / CELLS_PER_PARTICLE))
    return n if cap is None else min(n, int(cap))


def preset_seeds(master_seed: int, k: int) -> tuple[int, int, int]:
    """(state seed, ensemble seed, noise-floor seed) for preset k."""
    words = np.random.SeedSequence([int(master_seed), int(k)]).generate_state(3, np.uint64)
    return tuple(int(w) >> 1 for w in words)


@dataclass(frozen=True)
class RunConfig:
    params: PhysicalParams = field(default_factory=PhysicalParams)
    M: int = 15
    preset_count: int = 10
    epsilon: float = 0.2
    master_seed: int = 0
    n_particles: int | None = None
    n_cap: int | None = None
    sampler: str = NONEQUILIBRIUM
    n_output_times: int = 50
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    output_dir: str | None = None
    keep_snapshots: bool = True
    backend: str | None = None

    def __post_init__(self):
        if self.preset_count < 1:
            raise ValueError("preset_count must be at least 1")
        if self.n_particles is not None and self.n_particles < 1:
            raise ValueError("n_particles must be positive")
        CoarseGrid(self.epsilon)

    @property
    def n_effective(self) -> int:
        if self.n_particles is not None:
            return int(self.n_particles)
        return particles_for(self.epsilon, self.n_cap)

    def record(self) -> dict:
        rec = asdict(self)
        # where the artifacts live is not part of what they depend on
        rec.pop("output_dir")
        rec["n_effective"] = self.n_effective
        return rec


@dataclass
class RunResult:
    config: RunConfig
    mean: HSeries
    presets: list[HSeries]
    states: list[SuperpositionState]
    fit: FitResult | None
    fit_error: str | None = None
    dropped: list[int] = field(default_factory=list)

    @property
    def tau(self) -> float:
        return float(self.fit.params[1]) if self.fit is not None else math.nan


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    base: RunConfig

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        vals = list(self.values)
        if not vals or len(set(vals)) != len(vals):
            raise ValueError("sweep values must be distinct and non-empty")
        if self.axis == "epsilon" and min(vals) < 0.1:
            raise ValueError("epsilon sweeps are limited to eps >= 0.1")
        if self.axis == "modes" and not all(4 <= v <= 15 and int(v) == v for v in vals):
            raise ValueError("mode sweeps are limited to integer M in [4, 15]")
        if self.axis == "beta" and not all(0 < v <= 0.10 for v in vals):
            raise ValueError("beta sweeps are limited to (0, 0.10]")


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[dict]
    fit: FitResult | None
    fit_error: str | None
    spearman: float

    def column(self, key):
        return np.array([r[key] for r in self.rows], dtype=float)


_SOLUTIONS: dict = {}


def _solutions(params: PhysicalParams):
    if params not in _SOLUTIONS:
        _SOLUTIONS[params] = (solve_g(params, 1), solve_g(params, 2))
    return _SOLUTIONS[params]


def _ensemble_cfg(cfg: RunConfig, seed: int, n: int) -> EnsembleConfig:
    return EnsembleConfig(n, sampler=cfg.sampler, seed=seed, n_output_times=cfg.n_output_times,
                          integrator=cfg.integrator)


def _evolve_presets(cfg: RunConfig, n: int):
    """Evolve every preset once with n particles."""
    sol1, sol2 = _solutions(cfg.params)
    out = []
    for k in range(cfg.preset_count):
        s_seed, e_seed, f_seed = preset_seeds(cfg.master_seed, k)
        state = generate_state(cfg.M, s_seed)
        snaps = evolve_ensemble(_ensemble_cfg(cfg, e_seed, n), state, sol1, sol2, cfg.backend)
        log.info("preset %d/%d: M=%d beta=%g N=%d dropped=%d", k + 1, cfg.preset_count, cfg.M,
                 cfg.params.beta, n, snaps.dropped)
        out.append((state, snaps, f_seed))
    return out


def _analyse(cfg: RunConfig, evolved, epsilon: float, n: int) -> RunResult:
    sol1, sol2 = _solutions(cfg.params)
    grid = CoarseGrid(epsilon)
    series, states, dropped = [], [], []
    for state, snaps, f_seed in evolved:
        if snaps.n_requested != n:
            snaps = snaps.prefix(n)
        if cfg.sampler == EQUILIBRIUM:
            floor = None
        else:
            floor = noise_floor(state, sol1, sol2, grid, n, f_seed)
        hs = h_series(snaps, state, sol1, sol2, grid, noise_floor=floor)
        if floor is None:
            hs.noise_floor = float(hs.h_values[0])
        series.append(hs)
        states.append(state)
        dropped.append(snaps.dropped)
    mean = average_series(series)
    mean.meta.update(N=n, seed=cfg.master_seed)
    fit, err = None, None
    try:
        fit = fit_exp_decay(mean.times, mean.h_values, mean.noise_floor)
    except ValueError as exc:
        err = str(exc)
        log.warning("exponential fit failed: %s", err)
    run_cfg = replace(cfg, epsilon=epsilon, n_particles=n)
    return RunResult(run_cfg, mean, series, states, fit, err, dropped)


def _write_run(result: RunResult, out: Path, evolved=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    save_hseries_csv(out / "hseries_mean.csv", result.mean)
    if result.fit is not None:
        save_fit_csv(out / "fit_exp_decay.csv", result.fit)
        (out / "fit_report.txt").write_text(fit_report(result.fit))
    else:
        (out / "fit_report.txt").write_text(f"family = {EXP_DECAY}\nerror = {result.fit_error}\n")
    for k, (hs, state) in enumerate(zip(result.presets, result.states)):
        pdir = out / f"preset_{k:02d}"
        pdir.mkdir(exist_ok=True)
        (pdir / "state.txt").write_text(state.to_text())
        save_hseries_csv(pdir / "hseries.csv", hs)
        if evolved is not None and cfg.keep_snapshots:
            save_snapshots(pdir / "snapshots.bin", evolved[k][1])
    manifest = {
        "kind": "run",
        "code_version": __version__,
        "backend": backend_name(cfg.backend),
        "config": cfg.record(),
        "preset_seeds": [list(preset_seeds(cfg.master_seed, k)) for k in range(cfg.preset_count)],
        "dropped": result.dropped,
        "noise_floor": result.mean.noise_floor,
        "fit_error": result.fit_error,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_single(cfg: RunConfig) -> RunResult:
    """Evolve all presets, average H over them and fit the decay."""
    n = cfg.n_effective
    evolved = _evolve_presets(cfg, n)
    result = _analyse(cfg, evolved, cfg.epsilon, n)
    if cfg.output_dir is not None:
        _write_run(result, Path(cfg.output_dir), evolved)
    return result


def _sweep_fit(axis, x, tau):
    fitter = {"epsilon": fit_tau_epsilon, "modes": fit_tau_modes, "beta": fit_tau_beta}[axis]
    try:
        return fitter(x, tau), None
    except ValueError as exc:
        log.warning("%s sweep fit not applied: %s", axis, exc)
        return None, str(exc)


def _write_table(path: Path, axis: str, rows: list[dict]) -> None:
    keys = [axis, "tau", "tau_ci95", "H0", "r_squared", "noise_floor", "N", "status", "message"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in keys})


def _row(axis, value, res: RunResult | None, n, error=None) -> dict:
    fit = res.fit if res is not None else None
    ok = fit is not None
    return {
        axis: float(value) if axis != "modes" else int(value),
        "tau": float(fit.params[1]) if ok else math.nan,
        "tau_ci95": float(fit.ci95[1]) if ok else math.nan,
        "H0": float(fit.params[0]) if ok else math.nan,
        "r_squared": float(fit.r_squared) if ok else math.nan,
        "noise_floor": float(res.mean.noise_floor) if res is not None else math.nan,
        "N": int(n),
        "status": "ok" if ok else "failed",
        "message": error or (res.fit_error if res is not None and res.fit_error else ""),
    }


def run_sweep(spec: SweepSpec) -> SweepResult:
    """One preset-averaged run per value, then the matching tau fit.

    Epsilon sweeps evolve each preset once with the largest N of the grid and
    analyse every value on the leading particles, which by the per-particle
    seeding are exactly the ensembles a separate run would have drawn.
    """
    base = spec.base
    out = Path(base.output_dir) if base.output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    rows, results = [], []
    axis = spec.axis
    evolved = None
    if axis == "epsilon":
        sizes = {v: (base.n_particles or particles_for(v, base.n_cap)) for v in spec.values}
        try:
            evolved = _evolve_presets(base, max(sizes.values()))
        except (RuntimeError, ValueError) as exc:
            rows = [_row(axis, v, None, sizes[v], f"ensemble failed: {exc}") for v in spec.values]
            if out is not None:
                _write_table(out / "sweep_table.csv", axis, rows)
            raise
    for v in spec.values:
        try:
            if axis == "epsilon":
                n = sizes[v]
                res = _analyse(base, evolved, v, n)
            else:
                cfg = replace(base, M=int(v)) if axis == "modes" else \
                    replace(base, params=replace(base.params, beta=float(v)))
                n = cfg.n_effective
                res = _analyse(cfg, _evolve_presets(cfg, n), cfg.epsilon, n)
            rows.append(_row(axis, v, res, n))
            results.append(res)
            if out is not None:
                _write_run(res, out / f"{axis}_{v:g}")
        except (RuntimeError, ValueError, ArithmeticError) as exc:
            log.error("%s=%g failed: %s", axis, v, exc)
            rows.append(_row(axis, v, None, base.n_effective, str(exc)))
        if out is not None:
            _write_table(out / "sweep_table.csv", axis, rows)

    ok = [r for r in rows if r["status"] == "ok"]
    x = np.array([r[axis] for r in ok], dtype=float)
    tau = np.array([r["tau"] for r in ok], dtype=float)
    fit, err = _sweep_fit(axis, x, tau)
    rho = float(stats.spearmanr(x, tau)[0]) if len(ok) >= 3 else math.nan
    result = SweepResult(spec, rows, fit, err, rho)
    if out is not None:
        if fit is not None:
            save_fit_csv(out / f"fit_{fit.family}.csv", fit)
            (out / "fit_report.txt").write_text(fit_report(fit) + f"spearman = {rho!r}\n")
        else:
            (out / "fit_report.txt").write_text(f"error = {err}\nspearman = {rho!r}\n")
        manifest = {
            "kind": "sweep",
            "axis": axis,
            "values": list(spec.values),
            "code_version": __version__,
            "base": base.record(),
            "spearman": rho,
            "fit_error": err,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return result


def equivariance_check(cfg: RunConfig, factor: float = 2.0,
                       sampler: str = EQUILIBRIUM) -> dict:
    """Pass if max_t H <= factor * noise floor.

    With the equilibrium sampler the floor is H(0) of the run itself; any
    other sampler is compared with an independent equilibrium sample of
    the same size, which makes it a negative control.
    """
    res = run_single(replace(cfg, sampler=sampler))
    h = res.mean.h_values
    floor = float(res.mean.noise_floor)
    report = {
        "sampler": sampler,
        "h0": float(h[0]),
        "h_max": float(h.max()),
        "noise_floor": floor,
        "t_of_max": float(res.mean.times[int(np.argmax(h))]),
        "ratio": float(h.max() / floor) if floor > 0 else math.inf,
        "factor": factor,
        "passed": bool(h.max() <= factor * floor),
        "per_preset_ratio": [float(s.h_values.max() / s.noise_floor) for s in res.presets],
    }
    if cfg.output_dir is not None:
        Path(cfg.output_dir, "equivariance.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# figures ----------------------------------------------------------------

_SCRIPT = '''"""Re-draw {title} from {csv_name}."""
import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("{csv_name}")))
data = [r for r in rows if r["kind"] == "data"]
model = [r for r in rows if r["kind"] == "fit"]
fig, ax = plt.subplots(figsize=(5, 3.5))
ax.plot([float(r["x"]) for r in data], [float(r["y"]) for r in data], "o", ms=3, label="data")
if model:
    ax.plot([float(r["x"]) for r in model], [float(r["y"]) for r in model], "-", label={label!r})
ax.set_xlabel({xlabel!r})
ax.set_ylabel({ylabel!r})
ax.legend()
fig.tight_layout()
fig.savefig(sys.argv[1] if len(sys.argv) > 1 else "{svg_name}")
'''


def _figure_from_run(path: Path):
    hs = load_hseries_csv(path / "hseries_mean.csv")
    fit = load_fit_csv(path / "fit_exp_decay.csv") if (path / "fit_exp_decay.csv").exists() else None
    xs = np.linspace(hs.times[0], hs.times[-1], 200)
    label = f"H0 exp(-t/tau), tau={fit.params[1]:.3g}" if fit else "fit"
    return ("h_vs_t", "H(t)", hs.times, hs.h_values, xs, evaluate(EXP_DECAY, fit.params, xs)
            if fit else None, label, "t", "H")


def _figure_from_sweep(path: Path):
    rows = list(csv.DictReader(open(path / "sweep_table.csv")))
    axis = next(k for k in rows[0] if k in AXES)
    rows = [r for r in rows if r["status"] == "ok"]
    x = np.array([float(r[axis]) for r in rows])
    y = np.array([float(r["tau"]) for r in rows])
    fits = sorted(path.glob("fit_*.csv"))
    fit = load_fit_csv(fits[0]) if fits else None
    xs = np.linspace(x.min(), x.max(), 200) if x.size else np.empty(0)
    labels = {"epsilon": "a/eps + b", "modes": "a exp(-M/b) + c", "beta": "degree-5 polynomial"}
    xlabel = {"epsilon": "eps", "modes": "M", "beta": "beta"}[axis]
    return (f"tau_vs_{axis}", f"tau vs {xlabel}", x, y, xs,
            fit(xs) if fit is not None and xs.size else None, labels[axis], xlabel, "tau")


def _render_svg(x, y, xs, ys, label, xlabel, ylabel) -> bytes:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "bohmrelax"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, y, "o", ms=3, label="data")
    if ys is not None:
        ax.plot(xs, ys, "-", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return buf.getvalue()


def emit_plots(directory) -> list[Path]:
    """CSV, plot script and SVG for each figure the directory supports.

    Everything is rendered in memory first so a failure leaves no partial files.
    """
    path = Path(directory)
    if not path.is_dir():
        raise PlotError(f"{path} is not a directory")
    figures = []
    if (path / "hseries_mean.csv").exists():
        figures.append(_figure_from_run(path))
    if (path / "sweep_table.csv").exists():
        figures.append(_figure_from_sweep(path))
    if not figures:
        raise PlotError(f"{path} has neither hseries_mean.csv nor sweep_table.csv")

    files = {}
    for name, title, x, y, xs, ys, label, xlabel, ylabel in figures:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["kind", "x", "y"])
        w.writerows(["data", repr(float(a)), repr(float(b))] for a, b in zip(x, y))
        if ys is not None:
            w.writerows(["fit", repr(float(a)), repr(float(b))] for a, b in zip(xs, ys))
        files[f"{name}.csv"] = buf.getvalue().encode()
        files[f"{name}_plot.py"] = _SCRIPT.format(
            title=title, csv_name=f"{name}.csv", svg_name=f"{name}.svg", label=label,
            xlabel=xlabel, ylabel=ylabel).encode()
        files[f"{name}.svg"] = _render_svg(x, y, xs, ys, label, xlabel, ylabel)
    written = []
    for fname, data in files.items():
        (path / fname).write_bytes(data)
        written.append(path / fname)
    return written

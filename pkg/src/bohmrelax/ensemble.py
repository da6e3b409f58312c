"""Initial samples, ensemble evolution and snapshot persistence.

Every particle owns a Philox stream keyed by the ensemble seed with the
particle index in the counter, so particle i draws the same initial
position whatever N is and however the work is scheduled.  In particular
the first n particles of a large ensemble are exactly an ensemble of n.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .guidance import CONVERGED, IntegratorConfig, integrate_ladder
from .kernels import backend_name, build_model, velocity_points
from .modes import ModeSolution, PhysicalParams
from .wavefunction import SuperpositionState, to_normal

__all__ = [
    "EnsembleConfig",
    "EnsembleSnapshots",
    "EnsembleAbort",
    "SamplingError",
    "NONEQUILIBRIUM",
    "EQUILIBRIUM",
    "BOX",
    "output_times",
    "particle_rng",
    "sample_initial",
    "evolve_ensemble",
    "save_snapshots",
    "load_snapshots",
    "write_manifest",
    "export_csv",
]

log = logging.getLogger(__name__)

NONEQUILIBRIUM = "nonequilibrium"
EQUILIBRIUM = "equilibrium"
BOX = (-5.0, 5.0)
SCHEMA_VERSION = 1
_MIN_ACCEPTANCE = 1e-4
_BOUND_SAFETY = 1.5
_PROPOSALS_PER_ROUND = 32


class EnsembleAbort(RuntimeError):
    """Too many trajectories failed to converge."""


class SamplingError(ValueError):
    """Rejection sampler misconfigured (acceptance too low or bound violated)."""


@dataclass(frozen=True)
class EnsembleConfig:
    n_particles: int
    sampler: str = NONEQUILIBRIUM
    seed: int = 0
    box: tuple[float, float] = BOX
    gaussian_center: tuple[float, float] = (0.0, 0.0)
    gaussian_sigma: float = 1.0 / math.sqrt(2.0)
    n_output_times: int = 50
    t_max: float | None = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    max_drop_fraction: float = 0.01

    def __post_init__(self):
        if self.n_particles < 0:
            raise ValueError("n_particles must be nonnegative")
        if self.sampler not in (NONEQUILIBRIUM, EQUILIBRIUM):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if not self.gaussian_sigma > 0:
            raise ValueError("gaussian_sigma must be positive")
        if not self.box[0] < self.box[1]:
            raise ValueError("box must satisfy lo < hi")
        if self.n_output_times < 2:
            raise ValueError("need at least two output times")


@dataclass
class EnsembleSnapshots:
    """Positions (N_kept, T, 2) in (xa, xb) for the converged particles."""

    times: np.ndarray
    positions: np.ndarray
    particle_ids: np.ndarray
    n_requested: int
    dropped: int
    manifest: dict = field(default_factory=dict)

    def prefix(self, n: int) -> "EnsembleSnapshots":
        """The sub-ensemble made of particles 0..n-1 (those that converged)."""
        keep = self.particle_ids < n
        dropped = int(n - keep.sum())
        return EnsembleSnapshots(self.times, self.positions[keep], self.particle_ids[keep], n,
                                 dropped, {**self.manifest, "prefix_of": self.n_requested})


def output_times(cfg: EnsembleConfig, params: PhysicalParams) -> np.ndarray:
    t_max = params.t_max if cfg.t_max is None else float(cfg.t_max)
    if t_max > params.t_max * (1 + 1e-12):
        raise ValueError(f"t_max={t_max} beyond the validity margin {params.t_max}")
    return np.linspace(0.0, t_max, cfg.n_output_times)


def particle_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for one particle: Philox keyed by seed, counter by index."""
    key = int(seed) % 2 ** 64
    bitgen = np.random.Philox(key=np.array([key, 0x62726C78], dtype=np.uint64),
                              counter=np.array([0, 0, int(index), 0], dtype=np.uint64))
    return np.random.Generator(bitgen)


def _sample_gaussian(cfg: EnsembleConfig, n: int) -> np.ndarray:
    lo, hi = cfg.box
    out = np.empty((n, 2))
    cx, cy = cfg.gaussian_center
    for i in range(n):
        rng = particle_rng(cfg.seed, i)
        while True:
            xa, xb = rng.normal(0.0, cfg.gaussian_sigma, 2)
            xa += cx
            xb += cy
            if lo <= xa <= hi and lo <= xb <= hi:
                break
        out[i] = xa, xb
    return out


def _born_model_density(model, xa, xb, t):
    x1, x2 = to_normal((xa, xb))
    return velocity_points(model, x1, x2, t)[2]


def _sample_born(cfg, state, sol1, sol2, n, t):
    lo, hi = cfg.box
    model = build_model(state, sol1, sol2)
    g = np.linspace(lo, hi, 401)
    ga, gb = np.meshgrid(g, g, indexing="ij")
    dens = _born_model_density(model, ga.ravel(), gb.ravel(), t)
    bound = _BOUND_SAFETY * dens.max()
    box_mass = dens.reshape(ga.shape)[:-1, :-1].mean() * (hi - lo) ** 2
    acceptance = box_mass / ((hi - lo) ** 2 * bound)
    if not acceptance >= _MIN_ACCEPTANCE:
        raise SamplingError(f"rejection acceptance {acceptance:.2e} below {_MIN_ACCEPTANCE:g}")
    log.debug("Born sampler: bound %.4g, expected acceptance %.3g", bound, acceptance)

    k = _PROPOSALS_PER_ROUND
    out = np.empty((n, 2))
    rngs = [particle_rng(cfg.seed, i) for i in range(n)]
    pending = np.arange(n)
    while pending.size:
        u = np.stack([rngs[i].random((k, 3)) for i in pending])
        xa = lo + (hi - lo) * u[..., 0]
        xb = lo + (hi - lo) * u[..., 1]
        d = _born_model_density(model, xa.ravel(), xb.ravel(), t).reshape(xa.shape)
        if d.max() > bound:
            raise SamplingError(f"density {d.max():.4g} exceeds the rejection bound {bound:.4g}")
        acc = u[..., 2] * bound < d
        hit = acc.any(axis=1)
        first = np.argmax(acc, axis=1)
        rows = np.flatnonzero(hit)
        out[pending[rows], 0] = xa[rows, first[rows]]
        out[pending[rows], 1] = xb[rows, first[rows]]
        pending = pending[~hit]
    return out


def sample_initial(cfg: EnsembleConfig, state: SuperpositionState | None = None,
                   sol1: ModeSolution | None = None, sol2: ModeSolution | None = None,
                   t: float = 0.0, n: int | None = None) -> np.ndarray:
    """Initial (xa, xb) positions, shape (n, 2); n defaults to cfg.n_particles."""
    n = cfg.n_particles if n is None else int(n)
    if n == 0:
        return np.empty((0, 2))
    if cfg.sampler == NONEQUILIBRIUM:
        return _sample_gaussian(cfg, n)
    if state is None or sol1 is None or sol2 is None:
        raise ValueError("equilibrium sampling needs the state and both mode solutions")
    return _sample_born(cfg, state, sol1, sol2, n, t)


def evolve_ensemble(cfg: EnsembleConfig, state: SuperpositionState, sol1: ModeSolution,
                    sol2: ModeSolution, backend: str | None = None,
                    starts: np.ndarray | None = None) -> EnsembleSnapshots:
    """Sample (unless ``starts`` is given), integrate and collect converged particles."""
    params = sol1.params
    times = output_times(cfg, params)
    if starts is None:
        starts = sample_initial(cfg, state, sol1, sol2)
    starts = np.asarray(starts, dtype=float).reshape(-1, 2)
    n = starts.shape[0]
    res = integrate_ladder(state, sol1, sol2, starts, times, cfg.integrator, backend)
    ok = res.status == CONVERGED
    dropped = int(n - ok.sum())
    counts = res.counts()
    if n and dropped / n > cfg.max_drop_fraction:
        raise EnsembleAbort(
            f"{dropped} of {n} trajectories failed ({counts}); limit is "
            f"{cfg.max_drop_fraction:.1%} (seed={cfg.seed}, M={state.M}, beta={params.beta})")
    if dropped:
        log.info("dropped %d of %d trajectories: %s", dropped, n, counts)
    manifest = {
        "code_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "backend": backend_name(backend),
        "params": asdict(params),
        "ensemble": _config_record(cfg),
        "state": state.to_text(),
        "status_counts": counts,
        "mean_steps": float(res.steps.mean()) if n else 0.0,
        "final_tolerances": _tolerance_histogram(res.final_tolerance[ok]),
    }
    return EnsembleSnapshots(times, res.positions[ok], np.flatnonzero(ok), n, dropped, manifest)


def _config_record(cfg: EnsembleConfig) -> dict:
    rec = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    rec["integrator"] = asdict(cfg.integrator)
    rec["box"] = list(cfg.box)
    rec["gaussian_center"] = list(cfg.gaussian_center)
    return rec


def _tolerance_histogram(tols) -> dict:
    vals, cnt = np.unique(tols, return_counts=True)
    return {f"{v:.0e}": int(c) for v, c in zip(vals, cnt)}


def save_snapshots(path, snaps: EnsembleSnapshots) -> None:
    """Binary little-endian table after a plain-text header terminated by END."""
    path = Path(path)
    n_kept, nt = snaps.positions.shape[:2]
    header = [
        "bohmrelax-snapshots",
        f"schema = {SCHEMA_VERSION}",
        f"n_requested = {snaps.n_requested}",
        f"n_kept = {n_kept}",
        f"n_times = {nt}",
        f"dropped = {snaps.dropped}",
        "times = " + " ".join(repr(float(t)) for t in snaps.times),
        "layout = int64 ids[n_kept], float64 positions[n_kept][n_times][2] (xa, xb)",
        "END",
    ]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(snaps.particle_ids, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(snaps.positions, dtype="<f8").tobytes())
    write_manifest(path.with_suffix(".manifest.json"), snaps.manifest)


def load_snapshots(path) -> EnsembleSnapshots:
    raw = Path(path).read_bytes()
    end = raw.index(b"\nEND\n")
    lines = raw[:end].decode("ascii").splitlines()
    if not lines or lines[0] != "bohmrelax-snapshots":
        raise ValueError(f"{path}: not a snapshot file")
    meta = dict(line.split(" = ", 1) for line in lines[1:])
    if int(meta["schema"]) != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema {meta['schema']}")
    n_kept, nt = int(meta["n_kept"]), int(meta["n_times"])
    body = raw[end + 5:]
    ids = np.frombuffer(body, dtype="<i8", count=n_kept).astype(np.int64)
    pos = np.frombuffer(body, dtype="<f8", offset=8 * n_kept).reshape(n_kept, nt, 2).copy()
    times = np.array([float(v) for v in meta["times"].split()])
    manifest_path = Path(path).with_suffix(".manifest.json")
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    return EnsembleSnapshots(times, pos, ids, int(meta["n_requested"]), int(meta["dropped"]),
                             manifest)


def write_manifest(path, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def export_csv(path, snaps: EnsembleSnapshots) -> None:
    """Columns t, particle_id, x_a, x_b; one row per particle and time."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "particle_id", "x_a", "x_b"])
        for j, t in enumerate(snaps.times):
            for pid, (xa, xb) in zip(snaps.particle_ids, snaps.positions[:, j]):
                w.writerow([repr(float(t)), int(pid), repr(float(xa)), repr(float(xb))])

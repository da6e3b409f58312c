"""Coarse-grained densities on an epsilon-grid and the H-function.

H(t) = sum_cells eps^2 rho_bar ln(rho_bar / born_bar), with rho_bar from
particle counts and born_bar the cell mean of |Psi|^2.  Both tables are
renormalized to unit mass over the box before the log ratio.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .ensemble import BOX, EQUILIBRIUM, EnsembleConfig, EnsembleSnapshots, sample_initial
from .kernels import build_model, velocity_points
from .modes import ModeSolution
from .wavefunction import SuperpositionState, to_normal

__all__ = [
    "CoarseGrid",
    "CellDensity",
    "HSeries",
    "SupportError",
    "coarse_density",
    "coarse_born",
    "h_function",
    "h_series",
    "noise_floor",
    "average_series",
    "save_hseries_csv",
    "load_hseries_csv",
]

log = logging.getLogger(__name__)

BORN_FLOOR = 1e-300
IN_BOX_WARNING = 0.98


class SupportError(ArithmeticError):
    """Particles sit in a cell where the Born density vanishes."""


@dataclass(frozen=True)
class CoarseGrid:
    epsilon: float
    box: tuple[float, float] = BOX

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        side = self.box[1] - self.box[0]
        n = round(side / self.epsilon)
        if n < 1 or abs(n * self.epsilon - side) > 1e-12 * max(side, 1.0):
            raise ValueError(f"box side {side} is not a multiple of epsilon={self.epsilon}")

    @property
    def n_cells_per_axis(self) -> int:
        return round((self.box[1] - self.box[0]) / self.epsilon)

    @property
    def n_cells(self) -> int:
        return self.n_cells_per_axis ** 2

    @property
    def cell_area(self) -> float:
        return self.epsilon ** 2

    @property
    def edges(self) -> np.ndarray:
        return self.box[0] + self.epsilon * np.arange(self.n_cells_per_axis + 1)

    def cell_index(self, xa, xb):
        """Flat cell index (row = xa cell, column = xb cell) and in-box mask."""
        n = self.n_cells_per_axis
        lo, hi = self.box
        xa = np.asarray(xa, dtype=float)
        xb = np.asarray(xb, dtype=float)
        inside = (xa >= lo) & (xa <= hi) & (xb >= lo) & (xb <= hi)
        ia = np.clip(np.floor((xa - lo) / self.epsilon).astype(np.int64), 0, n - 1)
        ib = np.clip(np.floor((xb - lo) / self.epsilon).astype(np.int64), 0, n - 1)
        return ia * n + ib, inside


class CellDensity(NamedTuple):
    rho: np.ndarray
    n_in_box: int
    n_total: int

    @property
    def in_box_fraction(self) -> float:
        return self.n_in_box / self.n_total if self.n_total else float("nan")


def coarse_density(positions, grid: CoarseGrid) -> CellDensity:
    """rho_bar per cell from (N, 2) positions; out-of-box particles are tallied only."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    idx, inside = grid.cell_index(pos[:, 0], pos[:, 1])
    n_in = int(inside.sum())
    if n_in == 0:
        raise ValueError("no particles inside the box")
    counts = np.bincount(idx[inside], minlength=grid.n_cells)
    n = grid.n_cells_per_axis
    rho = (counts / (n_in * grid.cell_area)).reshape(n, n)
    return CellDensity(rho, n_in, pos.shape[0])


def _cell_nodes(grid: CoarseGrid, order: int):
    """Gauss-Legendre nodes per cell along one axis, shape (n_cells, order), and weights."""
    x, w = np.polynomial.legendre.leggauss(order)
    lo_edges = grid.edges[:-1]
    nodes = lo_edges[:, None] + 0.5 * grid.epsilon * (x[None, :] + 1.0)
    return nodes, 0.5 * w


def coarse_born(state: SuperpositionState, sol1: ModeSolution, sol2: ModeSolution,
                grid: CoarseGrid, t: float, order: int = 4, model=None) -> np.ndarray:
    """Cell means of |Psi|^2 by order x order Gauss-Legendre quadrature per cell."""
    model = build_model(state, sol1, sol2) if model is None else model
    nodes, w = _cell_nodes(grid, order)
    n = grid.n_cells_per_axis
    xa = np.broadcast_to(nodes[:, None, :, None], (n, n, order, order))
    xb = np.broadcast_to(nodes[None, :, None, :], (n, n, order, order))
    x1, x2 = to_normal((xa.ravel(), xb.ravel()))
    rho = velocity_points(model, x1, x2, t)[2].reshape(n, n, order, order)
    return np.einsum("ijkl,k,l->ij", rho, w, w)


def h_function(rho_table, born_table, grid: CoarseGrid, renormalize: bool = True) -> float:
    """Coarse-grained relative entropy with 0 ln 0 = 0."""
    rho = np.asarray(rho_table, dtype=float)
    born = np.asarray(born_table, dtype=float)
    if rho.shape != born.shape:
        raise ValueError("tables must live on the same grid")
    area = grid.cell_area
    if renormalize:
        rho = rho / (rho.sum() * area)
        born = born / (born.sum() * area)
    occupied = rho > 0
    if np.any(occupied & (born < BORN_FLOOR)):
        raise SupportError("particle mass in a cell where the Born density vanishes")
    r = rho[occupied]
    return float(area * np.sum(r * np.log(r / born[occupied])))


@dataclass
class HSeries:
    times: np.ndarray
    h_values: np.ndarray
    noise_floor: float | None = None
    in_box_fraction: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        """True when too much of the ensemble left the box at some time."""
        return self.in_box_fraction is not None and bool(np.any(self.in_box_fraction < IN_BOX_WARNING))


def h_series(snaps: EnsembleSnapshots, state: SuperpositionState, sol1: ModeSolution,
             sol2: ModeSolution, grid: CoarseGrid, noise_floor: float | None = None,
             order: int = 4) -> HSeries:
    """H at every snapshot time."""
    model = build_model(state, sol1, sol2)
    hs = np.empty(snaps.times.size)
    frac = np.empty(snaps.times.size)
    for j, t in enumerate(snaps.times):
        dens = coarse_density(snaps.positions[:, j], grid)
        born = coarse_born(state, sol1, sol2, grid, t, order, model)
        hs[j] = h_function(dens.rho, born, grid)
        if hs[j] < -1e-12:
            raise ArithmeticError(f"negative relative entropy {hs[j]} at t={t}")
        frac[j] = dens.in_box_fraction
    series = HSeries(snaps.times.copy(), hs, noise_floor, frac, {
        "epsilon": grid.epsilon,
        "M": state.M,
        "beta": sol1.params.beta,
        "N": int(snaps.positions.shape[0]),
        "seed": snaps.manifest.get("ensemble", {}).get("seed"),
    })
    if series.flagged:
        log.warning("in-box fraction fell to %.4f (below %.2f)", frac.min(), IN_BOX_WARNING)
    return series


def noise_floor(state: SuperpositionState, sol1: ModeSolution, sol2: ModeSolution,
                grid: CoarseGrid, n_particles: int, seed: int, order: int = 4) -> float:
    """H at t=0 of an equilibrium sample of the same size.

    By equivariance the equilibrium ensemble stays Born-distributed, so the
    t=0 value measures the finite-N sampling bias without evolving anything.
    """
    cfg = EnsembleConfig(n_particles, sampler=EQUILIBRIUM, seed=seed)
    pts = sample_initial(cfg, state, sol1, sol2)
    dens = coarse_density(pts, grid)
    born = coarse_born(state, sol1, sol2, grid, 0.0, order)
    return h_function(dens.rho, born, grid)


def average_series(series: list[HSeries]) -> HSeries:
    """Pointwise mean over presets; the noise floor is averaged the same way."""
    if not series:
        raise ValueError("nothing to average")
    times = series[0].times
    for s in series[1:]:
        if s.times.shape != times.shape or np.any(s.times != times):
            raise ValueError("series disagree on their time grid")
    h = np.mean([s.h_values for s in series], axis=0)
    floors = [s.noise_floor for s in series]
    nf = float(np.mean(floors)) if all(f is not None for f in floors) else None
    frac = np.min([s.in_box_fraction for s in series], axis=0) \
        if all(s.in_box_fraction is not None for s in series) else None
    meta = {**series[0].meta, "presets": len(series)}
    return HSeries(times.copy(), h, nf, frac, meta)


def save_hseries_csv(path, series: HSeries) -> None:
    """Columns t, H preceded by '# key = value' metadata lines."""
    with open(path, "w", newline="") as fh:
        for key in sorted(series.meta):
            fh.write(f"# {key} = {series.meta[key]}\n")
        fh.write(f"# noise_floor = {series.noise_floor!r}\n")
        w = csv.writer(fh)
        w.writerow(["t", "H"])
        for t, h in zip(series.times, series.h_values):
            w.writerow([repr(float(t)), repr(float(h))])


def load_hseries_csv(path) -> HSeries:
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                key, val = line[1:].split("=", 1)
                meta[key.strip()] = val.strip()
            elif line.strip() and not line.startswith("t,"):
                rows.append([float(v) for v in line.split(",")])
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    nf = meta.pop("noise_floor", "None")
    return HSeries(arr[:, 0], arr[:, 1], None if nf == "None" else float(nf), None, meta)

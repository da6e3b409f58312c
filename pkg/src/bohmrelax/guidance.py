"""de Broglie guidance in normal coordinates and the tolerance-ladder integrator.

Each trajectory is integrated with an adaptive 8th-order Dormand-Prince
pair at tolerance tol and again at tol/10.  If the positions at the
output times differ by more than ``ladder_cutoff`` the comparison moves
one rung down (tol/10 against tol/100, ...) until agreement or until the
tolerance floor is reached.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import STATUS_OK, STATUS_SINGULAR, build_model
from .modes import ModeSolution, ValidityError
from .wavefunction import SuperpositionState, from_normal, psi_total, psi_total_grad, to_normal

__all__ = [
    "IntegratorConfig",
    "TrajectoryResult",
    "LadderResult",
    "VelocitySingular",
    "CONVERGED",
    "LADDER_EXHAUSTED",
    "VELOCITY_SINGULAR",
    "velocity",
    "integrate_trajectory",
    "integrate_ladder",
]

log = logging.getLogger(__name__)

CONVERGED = "converged"
LADDER_EXHAUSTED = "ladder_exhausted"
VELOCITY_SINGULAR = "velocity_singular"
_STATUS_NAMES = np.array([CONVERGED, LADDER_EXHAUSTED, VELOCITY_SINGULAR])
_CODE = {CONVERGED: 0, LADDER_EXHAUSTED: 1, VELOCITY_SINGULAR: 2}


class VelocitySingular(ArithmeticError):
    """|Psi|^2 fell below the node floor; the velocity is undefined there."""


@dataclass(frozen=True)
class IntegratorConfig:
    tol_start: float = 1e-5
    tol_floor: float = 1e-15
    ladder_cutoff: float = 0.0025
    max_step: float = math.inf
    node_floor: float = 1e-28
    min_step: float = 1e-12
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not 0 < self.tol_floor <= self.tol_start:
            raise ValueError("need 0 < tol_floor <= tol_start")
        if not self.ladder_cutoff > 0:
            raise ValueError("ladder_cutoff must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")

    def ladder(self):
        """Tolerances tol_start * 10^-k for k = 0, 1, ... down to the floor."""
        out = []
        k = 0
        while self.tol_start / 10.0 ** k >= self.tol_floor * (1 - 1e-9):
            out.append(self.tol_start / 10.0 ** k)
            k += 1
        return out


@dataclass
class TrajectoryResult:
    times: np.ndarray
    positions: np.ndarray
    final_tolerance: float
    status: str
    steps: int


@dataclass
class LadderResult:
    """Batch outcome; ``positions`` has shape (P, T, 2) in (xa, xb)."""

    times: np.ndarray
    positions: np.ndarray
    final_tolerance: np.ndarray
    status: np.ndarray
    steps: np.ndarray

    @property
    def converged(self) -> np.ndarray:
        return self.status == CONVERGED

    def counts(self) -> dict:
        return {name: int(np.sum(self.status == name)) for name in _STATUS_NAMES}


def velocity(state: SuperpositionState, sol1: ModeSolution, sol2: ModeSolution, p, t,
             floor: float = 1e-28):
    """(v1, v2) = Im(grad Psi / Psi) / m at a point in normal coordinates."""
    psi = np.asarray(psi_total(state, sol1, sol2, p, t))
    g1, g2 = psi_total_grad(state, sol1, sol2, p, t)
    rho = np.abs(psi) ** 2
    if np.any(rho < floor):
        raise VelocitySingular(f"|Psi|^2 = {rho.min():.3g} below node floor {floor:g}")
    m = sol1.params.m
    v1 = np.imag(g1 / psi) / m
    v2 = np.imag(g2 / psi) / m
    if np.ndim(v1) == 0:
        return float(v1), float(v2)
    return v1, v2


def _check_times(times, sol1, sol2):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1:
        raise ValueError("output times must be a non-empty 1-d sequence")
    d = np.diff(times)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("output times must be strictly monotone")
    t_end = min(sol1.t_end, sol2.t_end)
    if times.min() < 0 or times.max() > t_end * (1 + 1e-12):
        raise ValidityError(f"output times must lie in [0, {t_end}]")
    return times


def integrate_ladder(state: SuperpositionState, sol1: ModeSolution, sol2: ModeSolution,
                     starts, output_times, cfg: IntegratorConfig | None = None,
                     backend: str | None = None) -> LadderResult:
    """Integrate many trajectories from (xa, xb) starts with the tolerance ladder."""
    cfg = cfg or IntegratorConfig()
    times = _check_times(output_times, sol1, sol2)
    starts = np.asarray(starts, dtype=float).reshape(-1, 2)
    npart = starts.shape[0]
    x1, x2 = to_normal((starts[:, 0], starts[:, 1]))
    y0 = np.stack([x1, x2], axis=1)
    model = build_model(state, sol1, sol2)

    def run(sel, tol):
        return kernels.integrate_batch(
            model, y0[sel], times, tol, max_step=cfg.max_step, h_min=cfg.min_step,
            max_steps=cfg.max_steps, floor=cfg.node_floor, backend=backend)

    tols = cfg.ladder()
    code = np.full(npart, _CODE[LADDER_EXHAUSTED], dtype=np.int64)
    final = np.full((npart, times.size, 2), np.nan)
    final_tol = np.full(npart, np.nan)
    steps = np.zeros(npart, np.int64)

    pending = np.arange(npart)
    prev, st, nst = run(pending, tols[0])
    steps += nst
    code[st == STATUS_SINGULAR] = _CODE[VELOCITY_SINGULAR]
    pending = pending[st == STATUS_OK]
    for tol in tols[1:]:
        if pending.size == 0:
            break
        cur, st, nst = run(pending, tol)
        steps[pending] += nst
        ok = st == STATUS_OK
        diff = np.max(np.abs(cur - prev[pending]), axis=(1, 2))
        done = ok & (diff <= cfg.ladder_cutoff)
        final[pending[done]] = cur[done]
        final_tol[pending[done]] = tol
        code[pending[done]] = _CODE[CONVERGED]
        code[pending[st == STATUS_SINGULAR]] = _CODE[VELOCITY_SINGULAR]
        keep = ok & ~done
        prev[pending[keep]] = cur[keep]
        pending = pending[keep]
        log.debug("ladder tol=%g: %d converged, %d still pending", tol, done.sum(), pending.size)

    xa, xb = from_normal((final[..., 0], final[..., 1]))
    return LadderResult(
        times=times,
        positions=np.stack([xa, xb], axis=-1),
        final_tolerance=final_tol,
        status=_STATUS_NAMES[code],
        steps=steps,
    )


def integrate_trajectory(state: SuperpositionState, sol1: ModeSolution, sol2: ModeSolution,
                         start, output_times, cfg: IntegratorConfig | None = None,
                         backend: str | None = None) -> TrajectoryResult:
    """Single trajectory from ``start`` = (xa, xb); positions returned in (xa, xb)."""
    res = integrate_ladder(state, sol1, sol2, [start], output_times, cfg, backend)
    return TrajectoryResult(
        times=res.times,
        positions=res.positions[0],
        final_tolerance=float(res.final_tolerance[0]),
        status=str(res.status[0]),
        steps=int(res.steps[0]),
    )

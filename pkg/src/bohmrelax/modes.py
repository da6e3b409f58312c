"""Exact solutions of a single oscillator with frequency Omega^2 = omega^2 +- beta t.

Each normal mode r evolves independently.  The Gaussian width and chirp
are carried by the g-functions (g_-, g_0, g_+), which are assembled from
two independent solutions f1, f2 of f'' + Omega^2 f = 0.  For linear
ramps those are Airy-type solutions written with J_{1/3}, Y_{1/3}.

All quantities are dimensionless (hbar = 1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .special import bessel_with_lower, hermite_table

__all__ = [
    "PhysicalParams",
    "ModeSolution",
    "ValidityError",
    "omega_squared",
    "homogeneous_solutions",
    "solve_g",
    "phase_integral",
    "psi_mode",
    "psi_mode_dx",
    "mode_stack",
    "GRID_POINTS",
    "T_CAP",
    "VALIDITY_MARGIN",
]

GRID_POINTS = 4000
T_CAP = 10.0
VALIDITY_MARGIN = 1e-3
_INVARIANT_RTOL = 1e-6


class ValidityError(ValueError):
    """Time outside the interval where the exact solution holds."""


@dataclass(frozen=True)
class PhysicalParams:
    m: float = 1.0
    omega: float = 1.0
    beta: float = 0.1

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f"mass must be positive, got {self.m}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")

    @property
    def t_valid(self) -> float:
        if self.beta == 0:
            return math.inf
        return self.omega ** 2 / self.beta

    @property
    def t_max(self) -> float:
        """End of the simulated interval: min(10, t_valid less a small margin)."""
        return min(T_CAP, (1.0 - VALIDITY_MARGIN) * self.t_valid)


def _sign(branch):
    if branch == 1:
        return 1.0
    if branch == 2:
        return -1.0
    raise ValueError(f"branch must be 1 or 2, got {branch!r}")


def omega_squared(params: PhysicalParams, branch: int, t):
    """Omega_r^2(t) = omega^2 + beta t (r = 1) or omega^2 - beta t (r = 2)."""
    s = _sign(branch)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > params.t_valid):
        raise ValidityError(
            f"t outside [0, {params.t_valid}]: Bessel solutions ill-defined past omega^2/beta"
        )
    out = params.omega ** 2 + s * params.beta * t
    return out if out.ndim else float(out)


def homogeneous_solutions(params: PhysicalParams, branch: int, t):
    """Two independent solutions of f'' + Omega_r^2 f = 0 and their time derivatives.

    Returns ``(f1, f2, f1_dot, f2_dot)``.  For beta > 0 these are
    f = Omega beta^{-1/3} Z_{1/3}(2 Omega^3 / (3 beta)) with Z = J, Y;
    for beta = 0 the constant-frequency pair cos(omega t), sin(omega t).
    """
    s = _sign(branch)
    t = np.asarray(t, dtype=float)
    if params.beta == 0:
        w = params.omega
        return np.cos(w * t), np.sin(w * t), -w * np.sin(w * t), w * np.cos(w * t)
    if branch == 2 and np.any(t >= params.t_valid):
        raise ValidityError(f"branch 2 requires t < {params.t_valid}")
    om2 = omega_squared(params, branch, t)
    om = np.sqrt(om2)
    z = (2.0 / 3.0) * om2 * om / params.beta
    j, y, jl, yl = bessel_with_lower(1.0 / 3.0, z)
    scale = params.beta ** (-1.0 / 3.0)
    # d/dz [z^{1/3} Z_{1/3}] = z^{1/3} Z_{-2/3} and dz/dt = +-Omega
    f1 = scale * om * j
    f2 = scale * om * y
    f1_dot = s * scale * om2 * jl
    f2_dot = s * scale * om2 * yl
    return f1, f2, f1_dot, f2_dot


@dataclass(frozen=True, eq=False)
class ModeSolution:
    """Tabulated g-functions and phase integral for one normal mode.

    Tables live on the uniform grid ``t_grid``; derivative tables are
    exact (from the g-system), so cubic Hermite interpolation is used.
    """

    params: PhysicalParams
    branch: int
    t_grid: np.ndarray
    g_minus: np.ndarray
    g_zero: np.ndarray
    g_plus: np.ndarray
    g_minus_dot: np.ndarray
    g_zero_dot: np.ndarray
    g_plus_dot: np.ndarray
    phase_table: np.ndarray
    phase_rate: np.ndarray
    omega_inv: float
    c1: float
    c2: float
    c3: float
    invariant_drift: float = field(default=0.0)

    @property
    def t_end(self) -> float:
        return float(self.t_grid[-1])

    @property
    def dt(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0])

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t > self.t_end * (1 + 1e-12)):
            raise ValidityError(f"t outside tabulated range [0, {self.t_end}]")
        h = self.dt
        i = np.clip(np.floor(t / h).astype(np.int64), 0, len(self.t_grid) - 2)
        s = (t - self.t_grid[i]) / h
        return i, s, h

    def _interp(self, values, slopes, t):
        i, s, h = self._locate(t)
        s2 = s * s
        s3 = s2 * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        out = (h00 * values[i] + h10 * h * slopes[i]
               + h01 * values[i + 1] + h11 * h * slopes[i + 1])
        return out if out.ndim else float(out)

    def g_at(self, t):
        """(g_-, g_0, g_+) at time ``t``."""
        return (
            self._interp(self.g_minus, self.g_minus_dot, t),
            self._interp(self.g_zero, self.g_zero_dot, t),
            self._interp(self.g_plus, self.g_plus_dot, t),
        )

    def packed(self) -> np.ndarray:
        """Interpolation rows used by the trajectory kernels, shape (6, K)."""
        return np.ascontiguousarray(np.stack([
            self.g_minus, self.g_minus_dot,
            self.g_zero, self.g_zero_dot,
            self.phase_table, self.phase_rate,
        ]))


def _g_from_f(params, branch, t, c):
    m = params.m
    f1, f2, f1d, f2d = homogeneous_solutions(params, branch, t)
    c1, c2, c3 = c
    gm = c1 * f1 * f1 + c2 * f1 * f2 + c3 * f2 * f2
    gm_dot = 2 * c1 * f1 * f1d + c2 * (f1d * f2 + f1 * f2d) + 2 * c3 * f2 * f2d
    quad = c1 * f1d * f1d + c2 * f1d * f2d + c3 * f2d * f2d
    g0 = -0.5 * m * gm_dot
    gp = m * m * quad
    return gm, g0, gp


def solve_g(params: PhysicalParams, branch: int, n_grid: int = GRID_POINTS,
            t_end: float | None = None) -> ModeSolution:
    """Build the g-function tables for branch ``r`` on [0, t_end].

    g_- = c1 f1^2 + c2 f1 f2 + c3 f2^2 with constants fixed by
    g_-(0) = 1/m, g_0(0) = 0, g_+(0) = m Omega(0)^2; then
    g_0 = -(m/2) dg_-/dt and g_+ = m^2 Omega^2 g_- - m dg_0/dt.
    """
    _sign(branch)
    m = params.m
    if t_end is None:
        t_end = params.t_max
    if not 0 < t_end <= params.t_max * (1 + 1e-12):
        raise ValidityError(f"t_end must lie in (0, {params.t_max}]")

    f1, f2, f1d, f2d = (float(v) for v in homogeneous_solutions(params, branch, 0.0))
    om0 = omega_squared(params, branch, 0.0)
    # rows: g_-(0), dg_-/dt(0) (∝ g_0), g_+(0)/m^2
    a = np.array([
        [f1 * f1, f1 * f2, f2 * f2],
        [2 * f1 * f1d, f1d * f2 + f1 * f2d, 2 * f2 * f2d],
        [f1d * f1d, f1d * f2d, f2d * f2d],
    ])
    rhs = np.array([1.0 / m, 0.0, om0 / m])
    if abs(np.linalg.det(a)) < 1e-14 * np.abs(a).max() ** 3:
        raise ArithmeticError("f1, f2 are not independent; cannot fix g-function constants")
    c = np.linalg.solve(a, rhs)

    t_grid = np.linspace(0.0, t_end, n_grid)
    gm, g0, gp = _g_from_f(params, branch, t_grid, c)
    om2 = omega_squared(params, branch, t_grid)

    inv = np.sqrt(gp * gm - g0 * g0)
    omega_inv = float(inv[0])
    drift = float(np.max(np.abs(inv - omega_inv)) / omega_inv)
    if drift > _INVARIANT_RTOL:
        raise ArithmeticError(f"invariant omega_I drifted by {drift:.3g} (branch {branch})")

    rate = omega_inv / (m * gm)
    t_mid = 0.5 * (t_grid[1:] + t_grid[:-1])
    gm_mid, _, _ = _g_from_f(params, branch, t_mid, c)
    rate_mid = omega_inv / (m * gm_mid)
    # composite Simpson on each grid interval
    pieces = np.diff(t_grid) / 6.0 * (rate[:-1] + 4.0 * rate_mid + rate[1:])
    phase = np.concatenate([[0.0], np.cumsum(pieces)])

    return ModeSolution(
        params=params,
        branch=branch,
        t_grid=t_grid,
        g_minus=gm,
        g_zero=g0,
        g_plus=gp,
        g_minus_dot=-2.0 * g0 / m,
        g_zero_dot=m * om2 * gm - gp / m,
        g_plus_dot=2.0 * m * om2 * g0,
        phase_table=phase,
        phase_rate=rate,
        omega_inv=omega_inv,
        c1=float(c[0]),
        c2=float(c[1]),
        c3=float(c[2]),
        invariant_drift=drift,
    )


def phase_integral(sol: ModeSolution, t):
    """Accumulated phase: integral of omega_I / (m g_-) from 0 to t."""
    return sol._interp(sol.phase_table, sol.phase_rate, t)


def _check_quantum_number(n):
    if n < 0 or int(n) != n:
        raise ValueError(f"quantum number must be a nonnegative integer, got {n!r}")


def psi_mode(sol: ModeSolution, n: int, x, t):
    """psi_n(x, t) for one normal mode; equals the n-th eigenstate of Omega_r(0) at t = 0."""
    _check_quantum_number(n)
    out = mode_stack(sol, n, x, t)[n]
    return out if out.ndim else complex(out)


def psi_mode_dx(sol: ModeSolution, n: int, x, t):
    """Spatial derivative of :func:`psi_mode`."""
    _check_quantum_number(n)
    out = mode_stack(sol, n, x, t, deriv=True)[1][n]
    return out if out.ndim else complex(out)


def mode_stack(sol: ModeSolution, nmax: int, x, t, deriv: bool = False):
    """psi_0..psi_nmax at ``x`` (and their x-derivatives when ``deriv``).

    Shapes are (nmax + 1,) + x.shape.
    """
    x = np.asarray(x, dtype=float)
    gm, g0, _ = sol.g_at(t)
    w = sol.omega_inv
    ph = phase_integral(sol, t)
    scale = math.sqrt(w / gm)
    a = complex(w, g0) / gm
    herm = hermite_table(nmax, scale * x)
    ns = np.arange(nmax + 1)
    norms = (w / (math.pi * gm)) ** 0.25 / np.sqrt(2.0 ** ns * np.array(
        [math.factorial(k) for k in ns], dtype=float))
    lead = (norms * np.exp(-1j * (ns + 0.5) * ph)).reshape((-1,) + (1,) * x.ndim)
    gauss = np.exp(-0.5 * a * x * x)
    psi = lead * gauss * herm
    if not deriv:
        return psi
    dh = np.zeros_like(herm)
    dh[1:] = 2.0 * ns[1:].reshape((-1,) + (1,) * x.ndim) * herm[:-1]
    dpsi = lead * gauss * (scale * dh - a * x * herm)
    return psi, dpsi

"""Two-oscillator superposition states and their evaluation.

A state is an evenly weighted superposition of M product eigenstates
Phi_{n1}(x1) Phi_{n2}(x2) with coefficients exp(2 pi i theta) / sqrt(M).
Normal coordinates are x1 = (xa + xb)/sqrt(2), x2 = (xa - xb)/sqrt(2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .modes import ModeSolution, mode_stack

__all__ = [
    "SuperpositionState",
    "PointAB",
    "PointNormal",
    "MAX_MODES",
    "generate_state",
    "shell_pairs",
    "to_normal",
    "from_normal",
    "psi_total",
    "psi_total_grad",
    "born_density",
]

MAX_MODES = 15
_SQRT_HALF = math.sqrt(0.5)


class PointAB(NamedTuple):
    xa: float | np.ndarray
    xb: float | np.ndarray


class PointNormal(NamedTuple):
    x1: float | np.ndarray
    x2: float | np.ndarray


@dataclass(frozen=True)
class SuperpositionState:
    n1: tuple[int, ...]
    n2: tuple[int, ...]
    theta: tuple[float, ...]
    seed: int | None = None

    def __post_init__(self):
        if not (len(self.n1) == len(self.n2) == len(self.theta)) or not self.n1:
            raise ValueError("n1, n2 and theta must be non-empty and of equal length")
        pairs = list(zip(self.n1, self.n2))
        if len(set(pairs)) != len(pairs):
            raise ValueError(f"duplicate quantum-number pairs in {pairs}")
        if any(a < 0 or b < 0 for a, b in pairs):
            raise ValueError("quantum numbers must be nonnegative")
        if any(not 0.0 <= th < 1.0 for th in self.theta):
            raise ValueError("phases must lie in [0, 1)")

    @property
    def M(self) -> int:
        return len(self.n1)

    @property
    def modes(self):
        return list(zip(self.n1, self.n2, self.theta))

    @property
    def coefficients(self) -> np.ndarray:
        th = np.asarray(self.theta)
        return np.exp(2j * np.pi * th) / math.sqrt(self.M)

    @property
    def nmax(self) -> tuple[int, int]:
        return max(self.n1), max(self.n2)

    def with_phase_shift(self, shift: float) -> "SuperpositionState":
        theta = tuple(float((th + shift) % 1.0) for th in self.theta)
        return SuperpositionState(self.n1, self.n2, theta, self.seed)

    def to_text(self) -> str:
        lines = [f"M = {self.M}", f"seed = {self.seed}", "# n1 n2 theta"]
        lines += [f"{a} {b} {th!r}" for a, b, th in self.modes]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SuperpositionState":
        header = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" in line:
                key, val = (s.strip() for s in line.split("=", 1))
                header[key] = val
            else:
                a, b, th = line.split()
                rows.append((int(a), int(b), float(th)))
        seed = header.get("seed", "None")
        state = cls(
            tuple(r[0] for r in rows),
            tuple(r[1] for r in rows),
            tuple(r[2] for r in rows),
            None if seed == "None" else int(seed),
        )
        if "M" in header and int(header["M"]) != state.M:
            raise ValueError(f"header says M={header['M']} but {state.M} modes listed")
        return state


def shell_pairs(s: int) -> list[tuple[int, int]]:
    """All (n1, n2) with n1 + n2 = s, ordered by n1."""
    return [(n1, s - n1) for n1 in range(s + 1)]


def generate_state(M: int, seed) -> SuperpositionState:
    """Random preset with M modes.

    Shells n1 + n2 = 0, 1, 2, ... are filled completely in order; the
    pairs of the topmost, partially filled shell are drawn uniformly
    without replacement.  Phases are uniform on [0, 1).
    """
    if not 1 <= M <= MAX_MODES:
        raise ValueError(f"M must lie in [1, {MAX_MODES}], got {M}")
    rng = np.random.default_rng(seed)
    pairs = []
    s = 0
    while len(pairs) + s + 1 <= M:
        pairs += shell_pairs(s)
        s += 1
    rest = M - len(pairs)
    if rest:
        top = shell_pairs(s)
        pick = np.sort(rng.choice(len(top), size=rest, replace=False))
        pairs += [top[i] for i in pick]
    theta = rng.random(M)
    return SuperpositionState(
        tuple(p[0] for p in pairs),
        tuple(p[1] for p in pairs),
        tuple(float(v) for v in theta),
        None if seed is None else int(seed),
    )


def to_normal(p) -> PointNormal:
    xa, xb = np.asarray(p[0], dtype=float), np.asarray(p[1], dtype=float)
    return PointNormal(_SQRT_HALF * (xa + xb), _SQRT_HALF * (xa - xb))


def from_normal(p) -> PointAB:
    x1, x2 = np.asarray(p[0], dtype=float), np.asarray(p[1], dtype=float)
    return PointAB(_SQRT_HALF * (x1 + x2), _SQRT_HALF * (x1 - x2))


def _stacks(state, sol1, sol2, p, t, deriv):
    x1 = np.asarray(p[0], dtype=float)
    x2 = np.asarray(p[1], dtype=float)
    n1max, n2max = state.nmax
    return mode_stack(sol1, n1max, x1, t, deriv), mode_stack(sol2, n2max, x2, t, deriv)


def _unwrap(v):
    return v if np.ndim(v) else complex(v)


def psi_total(state: SuperpositionState, sol1: ModeSolution, sol2: ModeSolution, p, t):
    """Psi(x1, x2, t) = sum_k c_k psi_{n1_k}(x1, t) psi_{n2_k}(x2, t)."""
    a, b = _stacks(state, sol1, sol2, p, t, False)
    out = 0.0
    for c, i, j in zip(state.coefficients, state.n1, state.n2):
        out = out + c * a[i] * b[j]
    return _unwrap(out)


def psi_total_grad(state: SuperpositionState, sol1: ModeSolution, sol2: ModeSolution, p, t):
    """(dPsi/dx1, dPsi/dx2) in normal coordinates."""
    (a, da), (b, db) = _stacks(state, sol1, sol2, p, t, True)
    g1 = g2 = 0.0
    for c, i, j in zip(state.coefficients, state.n1, state.n2):
        g1 = g1 + c * da[i] * b[j]
        g2 = g2 + c * a[i] * db[j]
    return _unwrap(g1), _unwrap(g2)


def born_density(state: SuperpositionState, sol1: ModeSolution, sol2: ModeSolution, p_ab, t):
    """|Psi|^2 at a point given in the original (xa, xb) coordinates."""
    psi = psi_total(state, sol1, sol2, to_normal(p_ab), t)
    out = np.abs(psi) ** 2
    return out if np.ndim(out) else float(out)

"""Bessel functions of fractional order and Hermite polynomials.

Only real arguments and orders in (0, 1) are supported; the exact mode
solutions need J_{1/3} and Y_{1/3}.  Small arguments use the ascending
series for J_{+-nu} with Y recovered through the reflection formula,
large arguments use the Hankel asymptotic expansion.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

__all__ = [
    "BesselPair",
    "BesselDomainError",
    "BesselPrecisionError",
    "bessel_pair",
    "bessel_with_lower",
    "hermite",
    "hermite_deriv",
    "hermite_table",
    "HERMITE_MAX_ORDER",
]

SERIES_SWITCHOVER = 12.0
HERMITE_MAX_ORDER = 60

_EPS = np.finfo(float).eps
_MAX_SERIES_TERMS = 60
_MAX_ASYMPTOTIC_TERMS = 60


class BesselDomainError(ValueError):
    pass


class BesselPrecisionError(ArithmeticError):
    def __init__(self, msg, x):
        super().__init__(f"{msg} (x={x!r})")
        self.x = x


class BesselPair(NamedTuple):
    j: float | np.ndarray
    y: float | np.ndarray
    j_prime: float | np.ndarray
    y_prime: float | np.ndarray


def _series_j(mu, x):
    """Ascending series for J_mu(x).

    Returns the sum and the largest term magnitude, which bounds the
    cancellation error.
    """
    half = 0.5 * x
    q = half * half
    term = half ** mu / math.gamma(mu + 1.0)
    total = term.copy()
    biggest = np.abs(term)
    for k in range(1, _MAX_SERIES_TERMS):
        term = -term * q / (k * (k + mu))
        total += term
        biggest = np.maximum(biggest, np.abs(term))
        if np.all(np.abs(term) <= 0.25 * _EPS * np.abs(total)):
            break
    return total, biggest


def _series_jy(nu, x):
    s = math.sin(nu * math.pi)
    c = math.cos(nu * math.pi)
    jp, bp = _series_j(nu, x)
    jm, bm = _series_j(-nu, x)
    y = (jp * c - jm) / s
    err = _EPS * (bp + bm) / abs(s)
    return jp, y, err


def _hankel_pq(nu, x):
    mu = 4.0 * nu * nu
    inv8x = 1.0 / (8.0 * x)
    p = np.ones_like(x)
    q = np.zeros_like(x)
    term = np.ones_like(x)
    last = np.full_like(x, np.inf)
    done = np.zeros(x.shape, dtype=bool)
    for k in range(1, _MAX_ASYMPTOTIC_TERMS):
        term = term * (mu - (2 * k - 1) ** 2) * inv8x / k
        mag = np.abs(term)
        # stop each lane once terms begin to grow (optimal truncation)
        done |= mag > last
        use = ~done
        if k % 2 == 1:
            q = np.where(use, q + (term if (k // 2) % 2 == 0 else -term), q)
        else:
            p = np.where(use, p + (-term if (k // 2) % 2 == 1 else term), p)
        last = np.where(use, mag, last)
        if np.all(done | (mag <= 0.25 * _EPS)):
            break
    return p, q, last


def _asymptotic_jy(nu, x):
    p, q, tail = _hankel_pq(nu, x)
    phase = (0.5 * nu + 0.25) * math.pi
    cx, sx = np.cos(x), np.sin(x)
    cp, sp = math.cos(phase), math.sin(phase)
    cchi = cx * cp + sx * sp
    schi = sx * cp - cx * sp
    amp = np.sqrt(2.0 / (math.pi * x))
    j = amp * (p * cchi - q * schi)
    y = amp * (p * schi + q * cchi)
    return j, y, amp * tail


def _check_args(order, x):
    if not 0.0 < order < 1.0:
        raise BesselDomainError(f"order must lie in (0, 1), got {order!r}")
    xa = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(xa)) or np.any(xa <= 0.0):
        bad = xa[~(np.isfinite(xa) & (xa > 0.0))].ravel()[0]
        raise BesselDomainError(f"Bessel argument must be positive, got {bad!r}")
    return xa


def _jy(nu, x):
    """J_nu, Y_nu for any real nu with 0 < |nu| < 1, plus error estimate."""
    j = np.empty_like(x)
    y = np.empty_like(x)
    err = np.empty_like(x)
    lo = x < SERIES_SWITCHOVER
    if np.any(lo):
        j[lo], y[lo], err[lo] = _series_jy(nu, x[lo])
    hi = ~lo
    if np.any(hi):
        j[hi], y[hi], err[hi] = _asymptotic_jy(nu, x[hi])
    return j, y, err


def bessel_with_lower(order, x):
    """Return (J_nu, Y_nu, J_{nu-1}, Y_{nu-1}) at ``x``.

    The lower-order pair gives derivatives without cancellation:
    d/dx [x^nu Z_nu(x)] = x^nu Z_{nu-1}(x).
    """
    xa = _check_args(order, x)
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    j, y, e1 = _jy(order, xa)
    jl, yl, e2 = _jy(order - 1.0, xa)
    modulus = np.hypot(j, y)
    bad = (e1 > 1e-10 * modulus) | (e2 > 1e-10 * np.hypot(jl, yl))
    if np.any(bad):
        raise BesselPrecisionError("Bessel evaluation lost precision", float(xa[bad][0]))
    if scalar:
        return float(j[0]), float(y[0]), float(jl[0]), float(yl[0])
    return j, y, jl, yl


def bessel_pair(order, x) -> BesselPair:
    """J_nu, Y_nu and their x-derivatives for 0 < nu < 1 and x > 0.

    Accepts scalars or arrays.  Derivatives follow
    Z'_nu = Z_{nu-1} - (nu/x) Z_nu.
    """
    j, y, jl, yl = bessel_with_lower(order, x)
    xa = np.asarray(x, dtype=float) if not np.isscalar(x) else float(x)
    jp = jl - order / xa * j
    yp = yl - order / xa * y
    return BesselPair(j, y, jp, yp)


def _check_n(n):
    if n < 0 or int(n) != n:
        raise ValueError(f"Hermite order must be a nonnegative integer, got {n!r}")
    if n > HERMITE_MAX_ORDER:
        raise ValueError(f"Hermite order {n} exceeds guard {HERMITE_MAX_ORDER}")


def hermite(n, u):
    """Physicists' Hermite polynomial H_n(u) by the three-term recurrence."""
    _check_n(n)
    u = np.asarray(u, dtype=float)
    h_prev = np.ones_like(u)
    if n == 0:
        return h_prev if u.ndim else float(h_prev)
    h = 2.0 * u
    for k in range(1, n):
        h, h_prev = 2.0 * u * h - 2.0 * k * h_prev, h
    return h if u.ndim else float(h)


def hermite_deriv(n, u):
    """H_n'(u) = 2 n H_{n-1}(u)."""
    _check_n(n)
    if n == 0:
        u = np.asarray(u, dtype=float)
        return np.zeros_like(u) if u.ndim else 0.0
    return 2.0 * n * hermite(n - 1, u)


def hermite_table(nmax, u):
    """Rows H_0..H_nmax evaluated at ``u``; shape (nmax + 1,) + u.shape."""
    _check_n(nmax)
    u = np.asarray(u, dtype=float)
    out = np.empty((nmax + 1,) + u.shape)
    out[0] = 1.0
    if nmax >= 1:
        out[1] = 2.0 * u
    for k in range(1, nmax):
        out[k + 1] = 2.0 * u * out[k] - 2.0 * k * out[k - 1]
    return out

"""numba kernels: per-particle scalar loops, parallel over particles."""
import math

import numpy as np
from numba import njit, prange

from .tableau import A, B, C, E3, E5, ERROR_EXPONENT, N_STAGES
from .common import (MAX_FACTOR, MIN_FACTOR, SAFETY, STATUS_OK, STATUS_SINGULAR,
                     STATUS_STEP_LIMIT)

_A = np.ascontiguousarray(A)
_B = np.ascontiguousarray(B)
_C = np.ascontiguousarray(C)
_E3 = np.ascontiguousarray(E3)
_E5 = np.ascontiguousarray(E5)


@njit(cache=True)
def _interp(tab, r, t, dtg):
    k = tab.shape[2]
    i = int(math.floor(t / dtg))
    if i < 0:
        i = 0
    elif i > k - 2:
        i = k - 2
    s = (t - i * dtg) / dtg
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = (s3 - 2.0 * s2 + s) * dtg
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = (s3 - s2) * dtg
    gm = h00 * tab[r, 0, i] + h10 * tab[r, 1, i] + h01 * tab[r, 0, i + 1] + h11 * tab[r, 1, i + 1]
    g0 = h00 * tab[r, 2, i] + h10 * tab[r, 3, i] + h01 * tab[r, 2, i + 1] + h11 * tab[r, 3, i + 1]
    ph = h00 * tab[r, 4, i] + h10 * tab[r, 5, i] + h01 * tab[r, 4, i + 1] + h11 * tab[r, 5, i + 1]
    return gm, g0, ph


@njit(cache=True)
def _mode_values(x, t, tab, r, dtg, w, nmax, norms, psi, dpsi):
    gm, g0, ph = _interp(tab, r, t, dtg)
    scale = math.sqrt(w / gm)
    u = scale * x
    ar = w / gm
    ai = g0 / gm
    a = complex(ar, ai)
    q = -0.5 * x * x
    mag = (w / (math.pi * gm)) ** 0.25 * math.exp(q * ar)
    gauss = mag * complex(math.cos(q * ai), math.sin(q * ai))
    rot = complex(math.cos(ph), -math.sin(ph))
    lead = gauss * complex(math.cos(0.5 * ph), -math.sin(0.5 * ph))
    h_prev = 0.0
    h = 1.0
    for k in range(nmax + 1):
        dh = 2.0 * k * h_prev
        base = lead * norms[k]
        psi[k] = base * h
        dpsi[k] = base * (scale * dh - a * x * h)
        h_next = 2.0 * u * h - 2.0 * k * h_prev
        h_prev = h
        h = h_next
        lead = lead * rot


@njit(cache=True)
def field(x1, x2, t, tab, dtg, winv, n1, n2, coef, norms, nmax1, nmax2,
          psi1, dpsi1, psi2, dpsi2):
    """Psi and its normal-coordinate gradient at one point."""
    _mode_values(x1, t, tab, 0, dtg, winv[0], nmax1, norms, psi1, dpsi1)
    _mode_values(x2, t, tab, 1, dtg, winv[1], nmax2, norms, psi2, dpsi2)
    psi = 0j
    g1 = 0j
    g2 = 0j
    for k in range(n1.shape[0]):
        a = psi1[n1[k]]
        b = psi2[n2[k]]
        c = coef[k]
        psi += c * a * b
        g1 += c * dpsi1[n1[k]] * b
        g2 += c * a * dpsi2[n2[k]]
    return psi, g1, g2


@njit(cache=True)
def _velocity(x1, x2, t, tab, dtg, winv, mass, n1, n2, coef, norms, nmax1, nmax2,
              psi1, dpsi1, psi2, dpsi2):
    psi, g1, g2 = field(x1, x2, t, tab, dtg, winv, n1, n2, coef, norms, nmax1, nmax2,
                        psi1, dpsi1, psi2, dpsi2)
    rho = psi.real * psi.real + psi.imag * psi.imag
    if rho == 0.0:
        return 0.0, 0.0, 0.0
    v1 = (g1.imag * psi.real - g1.real * psi.imag) / (rho * mass)
    v2 = (g2.imag * psi.real - g2.real * psi.imag) / (rho * mass)
    return v1, v2, rho


@njit(cache=True)
def velocity_points(x1, x2, t, tab, dtg, winv, mass, n1, n2, coef, norms, nmax1, nmax2):
    n = x1.shape[0]
    v1 = np.empty(n)
    v2 = np.empty(n)
    rho = np.empty(n)
    psi1 = np.empty(nmax1 + 1, np.complex128)
    dpsi1 = np.empty(nmax1 + 1, np.complex128)
    psi2 = np.empty(nmax2 + 1, np.complex128)
    dpsi2 = np.empty(nmax2 + 1, np.complex128)
    for i in range(n):
        v1[i], v2[i], rho[i] = _velocity(x1[i], x2[i], t[i], tab, dtg, winv, mass, n1, n2,
                                         coef, norms, nmax1, nmax2, psi1, dpsi1, psi2, dpsi2)
    return v1, v2, rho


@njit(cache=True)
def _integrate_one(y1, y2, t_out, atol, max_step, h_min, max_steps, floor, direction,
                   tab, dtg, winv, mass, n1, n2, coef, norms, nmax1, nmax2, out):
    psi1 = np.empty(nmax1 + 1, np.complex128)
    dpsi1 = np.empty(nmax1 + 1, np.complex128)
    psi2 = np.empty(nmax2 + 1, np.complex128)
    dpsi2 = np.empty(nmax2 + 1, np.complex128)
    k1 = np.empty(N_STAGES)
    k2 = np.empty(N_STAGES)

    t = t_out[0]
    out[0, 0] = y1
    out[0, 1] = y2
    f1, f2, rho = _velocity(y1, y2, t, tab, dtg, winv, mass, n1, n2, coef, norms,
                            nmax1, nmax2, psi1, dpsi1, psi2, dpsi2)
    if rho < floor:
        return STATUS_SINGULAR, 0

    # starting step (Hairer's heuristic, RMS norms scaled by atol)
    d0 = math.sqrt(0.5 * (y1 * y1 + y2 * y2)) / atol
    d1 = math.sqrt(0.5 * (f1 * f1 + f2 * f2)) / atol
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    span = abs(t_out[t_out.shape[0] - 1] - t_out[0])
    h0 = min(h0, span)
    g1, g2, _ = _velocity(y1 + h0 * f1 * direction, y2 + h0 * f2 * direction, t + direction * h0,
                          tab, dtg, winv, mass, n1, n2, coef, norms, nmax1, nmax2,
                          psi1, dpsi1, psi2, dpsi2)
    d2 = math.sqrt(0.5 * ((g1 - f1) ** 2 + (g2 - f2) ** 2)) / atol / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    h_abs = min(100.0 * h0, h1)

    steps = 0
    rejected = False
    for j in range(1, t_out.shape[0]):
        target = t_out[j]
        while direction * (target - t) > 0.0:
            if steps >= max_steps:
                return STATUS_STEP_LIMIT, steps
            steps += 1
            remaining = abs(target - t)
            h_try = min(h_abs, max_step)
            landing = h_try >= remaining
            if landing:
                h_try = remaining
            h = direction * h_try

            k1[0] = f1
            k2[0] = f2
            node = False
            for s in range(1, N_STAGES):
                a1 = 0.0
                a2 = 0.0
                for q in range(s):
                    a1 += _A[s, q] * k1[q]
                    a2 += _A[s, q] * k2[q]
                v1, v2, rho = _velocity(y1 + h * a1, y2 + h * a2, t + _C[s] * h,
                                        tab, dtg, winv, mass, n1, n2, coef, norms,
                                        nmax1, nmax2, psi1, dpsi1, psi2, dpsi2)
                if rho < floor:
                    node = True
                    break
                k1[s] = v1
                k2[s] = v2
            if not node:
                b1 = 0.0
                b2 = 0.0
                e51 = 0.0
                e52 = 0.0
                e31 = 0.0
                e32 = 0.0
                for s in range(N_STAGES):
                    b1 += _B[s] * k1[s]
                    b2 += _B[s] * k2[s]
                    e51 += _E5[s] * k1[s]
                    e52 += _E5[s] * k2[s]
                    e31 += _E3[s] * k1[s]
                    e32 += _E3[s] * k2[s]
                y1_new = y1 + h * b1
                y2_new = y2 + h * b2
                fn1, fn2, rho = _velocity(y1_new, y2_new, t + h, tab, dtg, winv, mass,
                                          n1, n2, coef, norms, nmax1, nmax2,
                                          psi1, dpsi1, psi2, dpsi2)
                if rho < floor:
                    node = True
            if node:
                h_abs = 0.5 * h_try
                rejected = True
                if h_abs < h_min:
                    return STATUS_SINGULAR, steps
                continue

            err5 = (e51 * e51 + e52 * e52) / (atol * atol)
            err3 = (e31 * e31 + e32 * e32) / (atol * atol)
            if err5 == 0.0 and err3 == 0.0:
                err = 0.0
            else:
                err = h_try * err5 / math.sqrt((err5 + 0.01 * err3) * 2.0)

            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** ERROR_EXPONENT)
                if rejected:
                    factor = min(1.0, factor)
                # a step shortened to land on an output time says nothing about h_abs
                if not landing or h_try >= h_abs:
                    h_abs = h_try * factor
                t = target if landing else t + h
                y1 = y1_new
                y2 = y2_new
                f1 = fn1
                f2 = fn2
                rejected = False
            else:
                h_abs = h_try * max(MIN_FACTOR, SAFETY * err ** ERROR_EXPONENT)
                rejected = True
                if h_abs < h_min:
                    return STATUS_SINGULAR, steps
        out[j, 0] = y1
        out[j, 1] = y2
    return STATUS_OK, steps


@njit(cache=True, parallel=True)
def integrate_batch(y0, t_out, atol, max_step, h_min, max_steps, floor,
                    tab, dtg, winv, mass, n1, n2, coef, norms, nmax1, nmax2):
    p = y0.shape[0]
    nt = t_out.shape[0]
    out = np.full((p, nt, 2), np.nan)
    status = np.empty(p, np.int64)
    steps = np.empty(p, np.int64)
    direction = 1.0 if t_out[nt - 1] >= t_out[0] else -1.0
    for i in prange(p):
        status[i], steps[i] = _integrate_one(
            y0[i, 0], y0[i, 1], t_out, atol, max_step, h_min, max_steps, floor, direction,
            tab, dtg, winv, mass, n1, n2, coef, norms, nmax1, nmax2, out[i])
    return out, status, steps

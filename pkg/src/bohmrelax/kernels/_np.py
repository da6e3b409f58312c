"""Pure-numpy kernels: the same algorithms vectorized across particles.

Every active particle advances by one (possibly rejected) step per
iteration with its own time, step size and next output index.
"""
import math

import numpy as np

from .common import (MAX_FACTOR, MIN_FACTOR, SAFETY, STATUS_OK, STATUS_SINGULAR,
                     STATUS_STEP_LIMIT)
from .tableau import A, B, C, E3, E5, ERROR_EXPONENT, N_STAGES


def _interp(tab, r, t, dtg):
    k = tab.shape[2]
    i = np.clip(np.floor(t / dtg).astype(np.int64), 0, k - 2)
    s = (t - i * dtg) / dtg
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = (s3 - 2.0 * s2 + s) * dtg
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = (s3 - s2) * dtg
    rows = tab[r]
    out = []
    for v, d in ((0, 1), (2, 3), (4, 5)):
        out.append(h00 * rows[v, i] + h10 * rows[d, i] + h01 * rows[v, i + 1] + h11 * rows[d, i + 1])
    return out


def _mode_values(x, t, tab, r, dtg, w, nmax, norms):
    gm, g0, ph = _interp(tab, r, t, dtg)
    scale = np.sqrt(w / gm)
    u = scale * x
    a = (w + 1j * g0) / gm
    gauss = (w / (math.pi * gm)) ** 0.25 * np.exp(-0.5 * x * x * a)
    psi = np.empty((nmax + 1,) + x.shape, np.complex128)
    dpsi = np.empty_like(psi)
    h_prev = np.zeros_like(x)
    h = np.ones_like(x)
    for k in range(nmax + 1):
        base = norms[k] * gauss * np.exp(-1j * (k + 0.5) * ph)
        psi[k] = base * h
        dpsi[k] = base * (scale * 2.0 * k * h_prev - a * x * h)
        h, h_prev = 2.0 * u * h - 2.0 * k * h_prev, h
    return psi, dpsi


def field(x1, x2, t, tab, dtg, winv, n1, n2, coef, norms, nmax1, nmax2):
    """Psi and its normal-coordinate gradient, vectorized over points."""
    p1, d1 = _mode_values(x1, t, tab, 0, dtg, winv[0], nmax1, norms)
    p2, d2 = _mode_values(x2, t, tab, 1, dtg, winv[1], nmax2, norms)
    psi = np.zeros(x1.shape, np.complex128)
    g1 = np.zeros_like(psi)
    g2 = np.zeros_like(psi)
    for c, i, j in zip(coef, n1, n2):
        psi += c * p1[i] * p2[j]
        g1 += c * d1[i] * p2[j]
        g2 += c * p1[i] * d2[j]
    return psi, g1, g2


def velocity_points(x1, x2, t, tab, dtg, winv, mass, n1, n2, coef, norms, nmax1, nmax2):
    psi, g1, g2 = field(x1, x2, t, tab, dtg, winv, n1, n2, coef, norms, nmax1, nmax2)
    rho = psi.real ** 2 + psi.imag ** 2
    safe = np.where(rho > 0.0, rho * mass, 1.0)
    v1 = np.where(rho > 0.0, (g1.imag * psi.real - g1.real * psi.imag) / safe, 0.0)
    v2 = np.where(rho > 0.0, (g2.imag * psi.real - g2.real * psi.imag) / safe, 0.0)
    return v1, v2, rho


def _rhs(y, t, model):
    v1, v2, rho = velocity_points(y[:, 0], y[:, 1], t, *model)
    return np.stack([v1, v2], axis=1), rho


def integrate_batch(y0, t_out, atol, max_step, h_min, max_steps, floor,
                    tab, dtg, winv, mass, n1, n2, coef, norms, nmax1, nmax2):
    model = (tab, dtg, winv, mass, n1, n2, coef, norms, nmax1, nmax2)
    p = y0.shape[0]
    nt = t_out.shape[0]
    out = np.full((p, nt, 2), np.nan)
    status = np.full(p, STATUS_OK, np.int64)
    steps = np.zeros(p, np.int64)
    if p == 0:
        return out, status, steps
    direction = 1.0 if t_out[-1] >= t_out[0] else -1.0

    y = np.array(y0, dtype=float)
    t = np.full(p, t_out[0], dtype=float)
    out[:, 0] = y
    f, rho = _rhs(y, t, model)
    active = rho >= floor
    status[~active] = STATUS_SINGULAR

    with np.errstate(divide="ignore", invalid="ignore"):
        d0 = np.sqrt(0.5 * np.sum(y * y, axis=1)) / atol
        d1 = np.sqrt(0.5 * np.sum(f * f, axis=1)) / atol
        h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
        h0 = np.minimum(h0, abs(t_out[-1] - t_out[0]))
        g, _ = _rhs(y + (direction * h0)[:, None] * f, t + direction * h0, model)
        d2 = np.sqrt(0.5 * np.sum((g - f) ** 2, axis=1)) / atol / h0
        h1 = np.where((d1 <= 1e-15) & (d2 <= 1e-15), np.maximum(1e-6, h0 * 1e-3),
                      (0.01 / np.maximum(d1, d2)) ** (1.0 / 8.0))
    h_abs = np.minimum(100.0 * h0, h1)

    nxt = np.ones(p, np.int64)
    rejected = np.zeros(p, bool)
    if nt == 1:
        active[:] = False
    kbuf = np.empty((N_STAGES, p, 2))

    while active.any():
        idx = np.flatnonzero(active)
        over = steps[idx] >= max_steps
        if over.any():
            status[idx[over]] = STATUS_STEP_LIMIT
            active[idx[over]] = False
            idx = idx[~over]
            if idx.size == 0:
                break
        steps[idx] += 1
        n = idx.size
        tt = t[idx]
        yy = y[idx]
        target = t_out[nxt[idx]]
        remaining = np.abs(target - tt)
        h_try = np.minimum(h_abs[idx], max_step)
        landing = h_try >= remaining
        h_try = np.where(landing, remaining, h_try)
        h = direction * h_try

        k = kbuf[:, :n]
        k[0] = f[idx]
        node = np.zeros(n, bool)
        for s in range(1, N_STAGES):
            ys = yy + h[:, None] * np.tensordot(A[s, :s], k[:s], axes=1)
            k[s], r = _rhs(ys, tt + C[s] * h, model)
            node |= r < floor
        y_new = yy + h[:, None] * np.tensordot(B, k, axes=1)
        f_new, r = _rhs(y_new, tt + h, model)
        node |= r < floor

        e5 = np.tensordot(E5, k, axes=1) / atol
        e3 = np.tensordot(E3, k, axes=1) / atol
        err5 = np.sum(e5 * e5, axis=1)
        err3 = np.sum(e3 * e3, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            err = np.where((err5 == 0.0) & (err3 == 0.0), 0.0,
                           h_try * err5 / np.sqrt((err5 + 0.01 * err3) * 2.0))
            grow = np.where(err == 0.0, MAX_FACTOR,
                            np.minimum(MAX_FACTOR, SAFETY * err ** ERROR_EXPONENT))
            shrink = np.maximum(MIN_FACTOR, SAFETY * err ** ERROR_EXPONENT)

        ok = ~node & (err < 1.0)
        bad_err = ~node & ~ok

        # accepted steps
        a_idx = idx[ok]
        fac = np.where(rejected[a_idx], np.minimum(1.0, grow[ok]), grow[ok])
        land_ok = landing[ok]
        resize = ~land_ok | (h_try[ok] >= h_abs[a_idx])
        h_abs[a_idx] = np.where(resize, h_try[ok] * fac, h_abs[a_idx])
        t[a_idx] = np.where(land_ok, target[ok], tt[ok] + h[ok])
        y[a_idx] = y_new[ok]
        f[a_idx] = f_new[ok]
        rejected[a_idx] = False
        landed = a_idx[land_ok]
        out[landed, nxt[landed]] = y[landed]
        nxt[landed] += 1
        active[landed[nxt[landed] >= nt]] = False

        # rejected by the error test
        r_idx = idx[bad_err]
        h_abs[r_idx] = h_try[bad_err] * shrink[bad_err]
        rejected[r_idx] = True

        # rejected because a stage came too close to a node
        n_idx = idx[node]
        h_abs[n_idx] = 0.5 * h_try[node]
        rejected[n_idx] = True

        stuck = np.concatenate([r_idx, n_idx])
        stuck = stuck[h_abs[stuck] < h_min]
        status[stuck] = STATUS_SINGULAR
        active[stuck] = False

    return out, status, steps

"""Least-squares fits of H(t) and of the relaxation time against eps, M and beta.

Nonlinear families use a damped Gauss-Newton iteration (Levenberg-style
damping, a step is kept only if it lowers the residual sum of squares).
Linear families are solved directly.  Intervals come from the linearized
covariance s^2 (J^T J)^-1 with a Student-t quantile.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

__all__ = [
    "FitResult",
    "FitDomainError",
    "NoDecayError",
    "EXP_DECAY",
    "INV_EPSILON",
    "EXP_MODES",
    "POLY5",
    "fit_exp_decay",
    "fit_tau_epsilon",
    "fit_tau_modes",
    "fit_tau_beta",
    "confidence_intervals",
    "gauss_newton",
    "evaluate",
    "save_fit_csv",
    "load_fit_csv",
    "fit_report",
]

EXP_DECAY = "exp_decay"
INV_EPSILON = "inv_epsilon"
EXP_MODES = "exp_modes"
POLY5 = "poly5"

PARAM_NAMES = {
    EXP_DECAY: ("H0", "tau"),
    INV_EPSILON: ("a", "b"),
    EXP_MODES: ("a", "b", "c"),
    POLY5: tuple(f"a{k}" for k in range(6)),
}

MAX_ITER = 200
GRAD_TOL = 1e-10
_COND_LIMIT = 1e14
_EPS = np.finfo(float).eps


class FitDomainError(ValueError):
    """Too few (distinct) points for the requested family."""


class NoDecayError(ValueError):
    """The H series shows no decay that an exponential could describe."""


@dataclass
class FitResult:
    family: str
    params: np.ndarray
    ci95: np.ndarray
    r_squared: float
    residual_norm: float
    converged: bool
    n_points: int
    iterations: int = 0
    unbounded: bool = False
    covariance: np.ndarray | None = None
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def names(self) -> tuple[str, ...]:
        return PARAM_NAMES[self.family]

    def as_dict(self) -> dict:
        return dict(zip(self.names, map(float, self.params)))

    def __call__(self, x):
        return evaluate(self.family, self.params, x)


def evaluate(family: str, params, x):
    x = np.asarray(x, dtype=float)
    p = np.asarray(params, dtype=float)
    if family == EXP_DECAY:
        return p[0] * np.exp(-x / p[1])
    if family == INV_EPSILON:
        return p[0] / x + p[1]
    if family == EXP_MODES:
        return p[0] * np.exp(-x / p[1]) + p[2]
    if family == POLY5:
        return np.polynomial.polynomial.polyval(x, p)
    raise ValueError(f"unknown family {family!r}")


def _r_squared(y, resid) -> float:
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res <= 1e-24 * max(1.0, float(y @ y)) else 0.0
    return 1.0 - ss_res / ss_tot


def confidence_intervals(jac, resid, level: float = 0.95):
    """Half-widths t_{(1+level)/2, n-p} * sqrt(diag(s^2 (J^T J)^-1)).

    Returns (half_widths, covariance, unbounded).  With a singular normal
    matrix or no residual degrees of freedom the widths are infinite.
    """
    jac = np.asarray(jac, dtype=float)
    resid = np.asarray(resid, dtype=float)
    n, p = jac.shape
    inf = np.full(p, np.inf)
    if n <= p:
        return inf, None, True
    jtj = jac.T @ jac
    # judge conditioning after column equilibration so units do not matter
    d = np.sqrt(np.diag(jtj))
    if np.any(d == 0.0):
        return inf, None, True
    scaled = jtj / np.outer(d, d)
    if np.linalg.cond(scaled) > _COND_LIMIT:
        return inf, None, True
    cov_scaled = np.linalg.inv(scaled)
    s2 = float(resid @ resid) / (n - p)
    cov = s2 * cov_scaled / np.outer(d, d)
    q = stats.t.ppf(0.5 + level / 2, n - p)
    return q * np.sqrt(np.maximum(np.diag(cov), 0.0)), cov, False


def gauss_newton(fun, jac, p0, max_iter: int = MAX_ITER, grad_tol: float = GRAD_TOL):
    """Minimize |fun(p)|^2 with adaptive damping.

    Converged when |J^T r| <= grad_tol * (1 + |r|).  Returns
    (params, converged, iterations, message).
    """
    p = np.array(p0, dtype=float)
    r = fun(p)
    cost = float(r @ r)
    lam = 1e-3
    for it in range(max_iter + 1):
        J = jac(p)
        g = J.T @ r
        if np.linalg.norm(g) <= grad_tol * (1.0 + math.sqrt(cost)):
            return p, True, it, "gradient criterion met"
        if it == max_iter:
            break
        A = J.T @ J
        diag = np.diag(A).copy()
        diag[diag == 0.0] = 1.0
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                p_new = p + step
                r_new = fun(p_new)
                cost_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else np.inf
                if cost_new < cost:
                    p, r, cost = p_new, r_new, cost_new
                    lam = max(lam / 3.0, 1e-12)
                    break
                # near the minimum the cost is flat to rounding; judge by the gradient
                if cost_new <= cost * (1.0 + 8.0 * _EPS):
                    g_new = jac(p_new).T @ r_new
                    if np.linalg.norm(g_new) < np.linalg.norm(g):
                        p, r, cost = p_new, r_new, cost_new
                        break
                if cost_new == cost and np.all(p_new == p):
                    return p, False, it, "step below floating-point resolution"
            lam *= 4.0
            if lam > 1e16:
                return p, False, it, "damping exhausted without decrease"
    return p, False, max_iter, f"no convergence after {max_iter} iterations"


def _as_xy(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    return x, y


def _finish(family, x, y, p, jac_mat, converged, iterations, message, extra=None):
    resid = y - evaluate(family, p, x)
    ci, cov, unbounded = confidence_intervals(jac_mat, resid)
    return FitResult(family, np.asarray(p, dtype=float), ci, _r_squared(y, resid),
                     float(np.linalg.norm(resid)), converged, x.size, iterations, unbounded,
                     cov, message, extra or {})


def fit_exp_decay(times, h_values, noise_floor: float | None = None) -> FitResult:
    """H0 exp(-t/tau) by least squares on points above the noise floor.

    The floor is not subtracted; points at or below it are left out.
    """
    t, h = _as_xy(times, h_values)
    keep = h > (0.0 if noise_floor is None else max(noise_floor, 0.0))
    t, h = t[keep], h[keep]
    if t.size < 5:
        raise NoDecayError(f"only {t.size} points above the noise floor; need 5")
    slope, intercept = np.polyfit(t, np.log(h), 1)
    if not slope < 0:
        raise NoDecayError("series does not decrease")
    p0 = np.array([math.exp(intercept), -1.0 / slope])

    def fun(p):
        return h - p[0] * np.exp(-t / p[1])

    def jac(p):
        e = np.exp(-t / p[1])
        # Jacobian of the model; the residual Jacobian is its negative
        return -np.column_stack([e, p[0] * t * e / p[1] ** 2])

    p, ok, it, msg = gauss_newton(fun, jac, p0)
    return _finish(EXP_DECAY, t, h, p, -jac(p), ok, it, msg,
                   {"excluded": int((~keep).sum()), "noise_floor": noise_floor})


def _need_distinct(x, k, what):
    if np.unique(x).size < k:
        raise FitDomainError(f"{what} needs at least {k} distinct abscissae, got {np.unique(x).size}")


def fit_tau_epsilon(eps_values, tau_values) -> FitResult:
    """tau = a/eps + b, linear least squares."""
    e, tau = _as_xy(eps_values, tau_values)
    _need_distinct(e, 3, "tau(eps) fit")
    if np.any(e <= 0):
        raise FitDomainError("epsilon must be positive")
    X = np.column_stack([1.0 / e, np.ones_like(e)])
    p = np.linalg.lstsq(X, tau, rcond=None)[0]
    return _finish(INV_EPSILON, e, tau, p, X, True, 0, "linear solve")


def fit_tau_modes(m_values, tau_values) -> FitResult:
    """tau = a exp(-M/b) + c, damped Gauss-Newton."""
    m, tau = _as_xy(m_values, tau_values)
    _need_distinct(m, 4, "tau(M) fit")
    c0 = float(tau.min())
    pos = tau - c0 > 0
    b0 = float(np.ptp(m))
    a0 = float(np.ptp(tau)) * math.exp(m.min() / b0)
    if pos.sum() >= 2:
        slope, intercept = np.polyfit(m[pos], np.log(tau[pos] - c0), 1)
        if slope < 0:
            b0 = -1.0 / slope
            a0 = math.exp(intercept)
    p0 = np.array([a0, b0, c0])

    def model_jac(p):
        e = np.exp(-m / p[1])
        return np.column_stack([e, p[0] * m * e / p[1] ** 2, np.ones_like(m)])

    p, ok, it, msg = gauss_newton(lambda p: tau - evaluate(EXP_MODES, p, m),
                                  lambda p: -model_jac(p), p0)
    return _finish(EXP_MODES, m, tau, p, model_jac(p), ok, it, msg)


def fit_tau_beta(beta_values, tau_values) -> FitResult:
    """Degree-5 polynomial in beta with columns scaled by max|beta|."""
    b, tau = _as_xy(beta_values, tau_values)
    _need_distinct(b, 6, "degree-5 tau(beta) fit")
    s = float(np.max(np.abs(b)))
    V = np.vander(b / s, 6, increasing=True)
    c = np.linalg.lstsq(V, tau, rcond=None)[0]
    scale = s ** -np.arange(6.0)
    p = c * scale
    X = np.vander(b, 6, increasing=True)
    res = _finish(POLY5, b, tau, p, V, True, 0, "linear solve")
    # intervals were computed in scaled coordinates
    res.ci95 = res.ci95 * scale
    if res.covariance is not None:
        res.covariance = res.covariance * np.outer(scale, scale)
    res.extra["design_condition"] = float(np.linalg.cond(X))
    return res


def save_fit_csv(path, fit: FitResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "param", "value", "ci95"])
        for name, v, c in zip(fit.names, fit.params, fit.ci95):
            w.writerow([fit.family, name, repr(float(v)), repr(float(c))])
        w.writerow([fit.family, "r_squared", repr(fit.r_squared), ""])
        w.writerow([fit.family, "residual_norm", repr(fit.residual_norm), ""])
        w.writerow([fit.family, "n_points", fit.n_points, ""])
        w.writerow([fit.family, "converged", int(fit.converged), ""])


def load_fit_csv(path) -> FitResult:
    rows = list(csv.DictReader(open(path, newline="")))
    family = rows[0]["family"]
    by = {r["param"]: r for r in rows}
    names = PARAM_NAMES[family]
    return FitResult(
        family,
        np.array([float(by[n]["value"]) for n in names]),
        np.array([float(by[n]["ci95"]) for n in names]),
        float(by["r_squared"]["value"]),
        float(by["residual_norm"]["value"]),
        bool(int(by["converged"]["value"])),
        int(by["n_points"]["value"]),
    )


def fit_report(fit: FitResult) -> str:
    lines = [f"family = {fit.family}", f"n = {fit.n_points}",
             f"converged = {fit.converged} ({fit.message})",
             f"r_squared = {fit.r_squared:.6f}", f"residual_norm = {fit.residual_norm:.6g}"]
    for name, v, c in zip(fit.names, fit.params, fit.ci95):
        lines.append(f"{name} = {v:.8g} +/- {c:.3g}")
    if fit.unbounded:
        lines.append("warning: normal matrix singular, intervals unbounded")
    return "\n".join(lines) + "\n"

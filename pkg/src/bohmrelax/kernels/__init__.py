"""Hot loops for trajectory integration.

Two interchangeable implementations exist: numba-compiled per-particle
loops (default) and a vectorized pure-numpy path.  Select with the
``BOHMRELAX_BACKEND`` environment variable (``numba`` or ``numpy``);
the numpy path is used automatically when numba cannot be imported.
``BOHMRELAX_WORKERS`` sets the numba thread count.
"""
from __future__ import annotations

import logging
import math
import os
from typing import NamedTuple

import numpy as np

from .common import STATUS_OK, STATUS_SINGULAR, STATUS_STEP_LIMIT
from . import _np

__all__ = [
    "FieldModel",
    "build_model",
    "backend_name",
    "get_backend",
    "integrate_batch",
    "velocity_points",
    "STATUS_OK",
    "STATUS_SINGULAR",
    "STATUS_STEP_LIMIT",
]

log = logging.getLogger(__name__)

_BACKENDS = {"numpy": _np}


def _load_numba():
    try:
        import numba
        if "NUMBA_THREADING_LAYER" not in os.environ:
            # the bundled TBB is often too old and numba warns on every launch
            numba.config.THREADING_LAYER = "workqueue"
        from . import _nb
    except ImportError as exc:  # pragma: no cover - depends on environment
        log.warning("numba unavailable (%s); using the numpy backend", exc)
        return None
    workers = os.environ.get("BOHMRELAX_WORKERS")
    if workers:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))
    return _nb


def get_backend(name: str | None = None):
    """Kernel module for ``name`` (default: the ``BOHMRELAX_BACKEND`` setting)."""
    if name is None:
        name = os.environ.get("BOHMRELAX_BACKEND", "numba")
    name = name.lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
    if name == "numba" and "numba" not in _BACKENDS:
        nb = _load_numba()
        _BACKENDS["numba"] = nb if nb is not None else _np
    return _BACKENDS[name]


def backend_name(name: str | None = None) -> str:
    return "numba" if get_backend(name) is not _np else "numpy"


class FieldModel(NamedTuple):
    """Flat arrays describing Psi for the kernels (argument order matters)."""

    tab: np.ndarray
    dtg: float
    winv: np.ndarray
    mass: float
    n1: np.ndarray
    n2: np.ndarray
    coef: np.ndarray
    norms: np.ndarray
    nmax1: int
    nmax2: int


def build_model(state, sol1, sol2) -> FieldModel:
    if sol1.t_grid.shape != sol2.t_grid.shape or sol1.t_end != sol2.t_end:
        raise ValueError("mode solutions must share one time grid")
    nmax1, nmax2 = state.nmax
    top = max(nmax1, nmax2)
    norms = np.array([1.0 / math.sqrt(2.0 ** k * math.factorial(k)) for k in range(top + 1)])
    return FieldModel(
        tab=np.ascontiguousarray(np.stack([sol1.packed(), sol2.packed()])),
        dtg=sol1.dt,
        winv=np.array([sol1.omega_inv, sol2.omega_inv]),
        mass=float(sol1.params.m),
        n1=np.asarray(state.n1, dtype=np.int64),
        n2=np.asarray(state.n2, dtype=np.int64),
        coef=np.ascontiguousarray(state.coefficients.astype(np.complex128)),
        norms=norms,
        nmax1=int(nmax1),
        nmax2=int(nmax2),
    )


def velocity_points(model: FieldModel, x1, x2, t, backend=None):
    """Guidance velocity and |Psi|^2 at arrays of (x1, x2, t)."""
    x1 = np.ascontiguousarray(x1, dtype=float)
    x2 = np.ascontiguousarray(x2, dtype=float)
    t = np.ascontiguousarray(np.broadcast_to(np.asarray(t, dtype=float), x1.shape))
    return get_backend(backend).velocity_points(x1, x2, t, *model)


def integrate_batch(model: FieldModel, y0, t_out, atol, *, max_step, h_min, max_steps,
                    floor, backend=None):
    """One fixed-tolerance pass for many particles in normal coordinates.

    Returns positions (P, T, 2), per-particle status codes and step counts.
    """
    y0 = np.ascontiguousarray(np.asarray(y0, dtype=float).reshape(-1, 2))
    t_out = np.ascontiguousarray(t_out, dtype=float)
    return get_backend(backend).integrate_batch(
        y0, t_out, float(atol), float(max_step), float(h_min), int(max_steps), float(floor),
        *model)

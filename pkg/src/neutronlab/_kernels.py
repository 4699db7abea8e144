"""Hot numeric kernels: CSR matvec and one-level nodal interpolation.

Two interchangeable backends live here.  The numba backend compiles the
loops with ``@njit``; the numpy backend is a vectorized fallback with
identical semantics.  Selection happens once at import time through the
environment variable ``NEUTRONLAB_BACKEND``:

    auto   use numba when importable (default)
    numba  require numba, fail loudly if missing
    numpy  force the pure-numpy path

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

_REQUESTED = os.environ.get("NEUTRONLAB_BACKEND", "auto").strip().lower()
if _REQUESTED not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"NEUTRONLAB_BACKEND must be one of auto|numba|numpy, got {_REQUESTED!r}"
    )


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _csr_matvec_np(indptr, indices, data, x):
    out = np.zeros(indptr.shape[0] - 1, dtype=np.float64)
    # segment-sum of data*x[indices] over rows
    prod = data * x[indices]
    np.add.at(out, np.repeat(np.arange(out.shape[0]), np.diff(indptr)), prod)
    return out


def _interp_up_np(u):
    # u: (n, m) coarse values along axis 0 -> (2n+1, m) fine values.
    # Odd fine rows copy coarse nodes, even rows average neighbours
    # (ghost zeros outside).
    n, m = u.shape
    v = np.zeros((2 * n + 1, m), dtype=np.float64)
    v[1::2] = u
    v[0] = 0.5 * u[0]
    v[2 * n] = 0.5 * u[n - 1]
    if n > 1:
        v[2:-2:2] = 0.5 * (u[:-1] + u[1:])
    return v


def _interp_down_np(v):
    # adjoint of _interp_up_np: (2n+1, m) -> (n, m)
    nf, m = v.shape
    n = (nf - 1) // 2
    u = v[1::2].copy()
    u += 0.5 * v[0:-1:2]
    u += 0.5 * v[2::2]
    return u


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

_HAS_NUMBA = False
if _REQUESTED in ("auto", "numba"):
    try:
        from numba import njit

        _HAS_NUMBA = True
    except ImportError:
        if _REQUESTED == "numba":
            raise
        _HAS_NUMBA = False

if _HAS_NUMBA:

    @njit(cache=True)
    def _csr_matvec_nb(indptr, indices, data, x):
        n = indptr.shape[0] - 1
        out = np.zeros(n, dtype=np.float64)
        for i in range(n):
            acc = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                acc += data[p] * x[indices[p]]
            out[i] = acc
        return out

    @njit(cache=True)
    def _interp_up_nb(u):
        n, m = u.shape
        v = np.zeros((2 * n + 1, m), dtype=np.float64)
        for j in range(m):
            v[0, j] = 0.5 * u[0, j]
            v[2 * n, j] = 0.5 * u[n - 1, j]
        for c in range(n):
            for j in range(m):
                v[2 * c + 1, j] = u[c, j]
        for c in range(1, n):
            for j in range(m):
                v[2 * c, j] = 0.5 * (u[c - 1, j] + u[c, j])
        return v

    @njit(cache=True)
    def _interp_down_nb(v):
        # grouping matches the numpy fallback bit for bit
        nf, m = v.shape
        n = (nf - 1) // 2
        u = np.empty((n, m), dtype=np.float64)
        for c in range(n):
            for j in range(m):
                u[c, j] = (v[2 * c + 1, j] + 0.5 * v[2 * c, j]) + 0.5 * v[2 * c + 2, j]
        return u


USE_NUMBA = _HAS_NUMBA

if USE_NUMBA:
    csr_matvec = _csr_matvec_nb
    interp_up = _interp_up_nb
    interp_down = _interp_down_nb
else:
    csr_matvec = _csr_matvec_np
    interp_up = _interp_up_np
    interp_down = _interp_down_np

# fallbacks are always importable for benchmarking / cross-checks
csr_matvec_numpy = _csr_matvec_np
interp_up_numpy = _interp_up_np
interp_down_numpy = _interp_down_np


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"

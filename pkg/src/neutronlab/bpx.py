"""Modified BPX preconditioner built from dyadic interpolation operators.

The one-level 1D interpolation operator maps coarse nodal coefficients to the
fine grid (copy at coincident nodes, average at bisection nodes, ghost zeros
on the boundary).  Multi-level and multi-dimensional operators are the
telescoping products and Kronecker powers of that single matrix.  The
preconditioner F stacks all levels, weighted by 2^(-l(2-d)/2), and satisfies

    F (F^T L F)^+ F^T = L^{-1}

for any symmetric positive definite stiffness-type L, which verify_flft
checks numerically.  bpx_pcg_solve uses the matrix-free form of F F^T as a
conjugate-gradient preconditioner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels
from .assembly import SparseSymMatrix
from .errors import ConvergenceFailure, ResourceLimitError

__all__ = [
    "InterpOp",
    "BpxOp",
    "BpxApply",
    "interp_1d_one_level",
    "interp_multi",
    "n_level",
    "n_cumulative",
    "bpx_build",
    "precond_operator",
    "verify_flft",
    "bpx_pcg",
    "bpx_pcg_solve",
]


def n_level(d: int, l: int) -> int:
    """Grid points at level l in d dimensions: (2^l - 1)^d."""
    return (2**l - 1) ** d


def n_cumulative(d: int, L: int) -> int:
    """Total grid points over levels 1..L."""
    return sum(n_level(d, l) for l in range(1, L + 1))


@dataclass(frozen=True)
class InterpOp:
    dim: int
    from_level: int
    to_level: int
    matrix: np.ndarray


def _interp_1d_matrix(l: int) -> np.ndarray:
    n = 2**l - 1
    nf = 2 ** (l + 1) - 1
    m = np.zeros((nf, n))
    for c in range(n):
        m[2 * c + 1, c] = 1.0
        m[2 * c, c] += 0.5
        m[2 * c + 2, c] += 0.5
    return m


def interp_1d_one_level(l: int) -> InterpOp:
    """One-level 1D interpolation, shape (2^(l+1)-1) x (2^l - 1)."""
    if l < 1:
        raise ValueError("l must be >= 1")
    return InterpOp(1, l, l + 1, _interp_1d_matrix(l))


def _interp_matrix(d: int, l: int, l_to: int) -> np.ndarray:
    """Dense interpolation matrix, allowing l == l_to (identity)."""
    one_d = np.eye(2**l - 1)
    for j in range(l, l_to):
        one_d = _interp_1d_matrix(j) @ one_d
    out = one_d
    for _ in range(d - 1):
        out = np.kron(out, one_d)
    return out


def interp_multi(d: int, l: int, l_to: int) -> InterpOp:
    """d-dimensional interpolation from level l to l_to > l.

    Equals both the telescoping product of one-level operators and the d-fold
    Kronecker power of the 1D operator.
    """
    if not (1 <= l < l_to):
        raise ValueError(f"need 1 <= l < l_to, got l={l}, l_to={l_to}")
    if d not in (1, 2, 3):
        raise ValueError("d must be 1, 2 or 3")
    return InterpOp(d, l, l_to, _interp_matrix(d, l, l_to))


# ---------------------------------------------------------------------------
# matrix-free interpolation applies (hot path of the PCG preconditioner)
# ---------------------------------------------------------------------------

def _apply_up_once(arr_flat: np.ndarray, d: int, l: int) -> np.ndarray:
    """Apply the one-level d-dim interpolation to a flat level-l vector."""
    n = 2**l - 1
    arr = arr_flat.reshape((n,) * d)
    for axis in range(d):
        arr = np.moveaxis(arr, axis, 0)
        lead = arr.shape[0]
        rest = arr.shape[1:]
        flat = np.ascontiguousarray(arr.reshape(lead, -1))
        flat = _kernels.interp_up(flat)
        arr = np.moveaxis(flat.reshape((2 * lead + 1,) + rest), 0, axis)
    return arr.reshape(-1)


def _apply_down_once(arr_flat: np.ndarray, d: int, l_fine: int) -> np.ndarray:
    """Adjoint of _apply_up_once, mapping level l_fine to l_fine - 1."""
    nf = 2**l_fine - 1
    arr = arr_flat.reshape((nf,) * d)
    for axis in range(d):
        arr = np.moveaxis(arr, axis, 0)
        lead = arr.shape[0]
        rest = arr.shape[1:]
        flat = np.ascontiguousarray(arr.reshape(lead, -1))
        flat = _kernels.interp_down(flat)
        arr = np.moveaxis(flat.reshape(((lead - 1) // 2,) + rest), 0, axis)
    return arr.reshape(-1)


class BpxApply:
    """Matrix-free F, F^T and F F^T applies; no dense storage, no size guard."""

    def __init__(self, dim: int, top_level: int):
        self.dim = dim
        self.top_level = top_level
        self.weights = [
            2.0 ** (-l * (2 - dim) / 2.0) for l in range(1, top_level + 1)
        ]
        self.offsets = np.cumsum(
            [0] + [n_level(dim, l) for l in range(1, top_level + 1)]
        )
        self.n_fine = n_level(dim, top_level)
        self.n_total = int(self.offsets[-1])

    def apply_f(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_fine)
        for l in range(1, self.top_level + 1):
            blk = x[self.offsets[l - 1] : self.offsets[l]]
            y = np.asarray(blk, dtype=np.float64)
            for j in range(l, self.top_level):
                y = _apply_up_once(y, self.dim, j)
            out += self.weights[l - 1] * y
        return out

    def apply_ft(self, v: np.ndarray) -> np.ndarray:
        out = np.empty(self.n_total)
        for l in range(self.top_level, 0, -1):
            y = np.asarray(v, dtype=np.float64)
            for j in range(self.top_level, l, -1):
                y = _apply_down_once(y, self.dim, j)
            out[self.offsets[l - 1] : self.offsets[l]] = self.weights[l - 1] * y
        return out

    def apply_fft(self, v: np.ndarray) -> np.ndarray:
        return self.apply_f(self.apply_ft(v))


@dataclass(frozen=True)
class BpxOp:
    """Dense modified BPX preconditioner F and its zero-row embedding."""

    dim: int
    top_level: int
    f: np.ndarray
    fhat: np.ndarray
    apply: BpxApply = field(repr=False, compare=False, default=None)


SIZE_GUARD = 20000


def bpx_build(d: int, L: int) -> BpxOp:
    """F = sum_l 2^(-l(2-d)/2) * (level-l block = I^d_{l->L}); F-hat stacks
    zero rows above F.  Dense build guarded at 20000 total grid points."""
    if d not in (1, 2, 3):
        raise ValueError("d must be 1, 2 or 3")
    if L < 1:
        raise ValueError("L must be >= 1")
    n_total = n_cumulative(d, L)
    if n_total > SIZE_GUARD:
        raise ResourceLimitError(
            f"dense BPX build needs {n_total} columns, guard is {SIZE_GUARD}"
        )
    nf = n_level(d, L)
    f = np.zeros((nf, n_total))
    off = 0
    for l in range(1, L + 1):
        nl = n_level(d, l)
        w = 2.0 ** (-l * (2 - d) / 2.0)
        f[:, off : off + nl] = w * _interp_matrix(d, l, L)
        off += nl
    fhat = np.vstack([np.zeros((n_total - nf, n_total)), f])
    return BpxOp(d, L, f, fhat, BpxApply(d, L))


def precond_operator(F: BpxOp, L_mat: SparseSymMatrix) -> SparseSymMatrix:
    """F^T L F, symmetric positive semidefinite."""
    if L_mat.n != F.f.shape[0]:
        raise ValueError(
            f"dimension mismatch: L is {L_mat.n}, F has {F.f.shape[0]} rows"
        )
    m = F.f.T @ (L_mat.to_scipy() @ F.f)
    return SparseSymMatrix.from_dense(m)


PINV_RCOND = 1e-12


def verify_flft(F: BpxOp, L_mat: SparseSymMatrix) -> float:
    """Relative spectral-norm residual of F (F^T L F)^+ F^T against L^{-1}."""
    dense = L_mat.to_dense()
    try:
        scipy.linalg.cho_factor(dense)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("L must be symmetric positive definite") from exc
    l_inv = scipy.linalg.inv(dense)
    ftlf = F.f.T @ dense @ F.f
    recon = F.f @ np.linalg.pinv(ftlf, rcond=PINV_RCOND) @ F.f.T
    return float(
        np.linalg.norm(recon - l_inv, 2) / np.linalg.norm(l_inv, 2)
    )


def _infer_mesh_shape(n: int) -> tuple[int, int]:
    for d in (1, 2, 3):
        per = round(n ** (1.0 / d))
        if per**d == n and (per + 1) & per == 0 and per >= 1:
            return d, (per + 1).bit_length() - 1
    raise ValueError(
        f"cannot infer (dim, level) from size {n}; pass them explicitly"
    )


def bpx_pcg(
    L_mat: SparseSymMatrix,
    rhs: np.ndarray,
    tol: float,
    dim: int | None = None,
    level: int | None = None,
    max_iter: int = 10000,
) -> tuple[np.ndarray, int]:
    """Conjugate gradients on L x = rhs preconditioned by v -> F F^T v.

    Returns (x, iterations); raises ConvergenceFailure with the final
    relative residual if the iteration cap is hit.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if dim is None or level is None:
        dim, level = _infer_mesh_shape(L_mat.n)
    pre = BpxApply(dim, level)
    rhs = np.asarray(rhs, dtype=np.float64)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = pre.apply_fft(r)
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        ap = L_mat.matvec(p)
        alpha = rz / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        res = np.linalg.norm(r) / rhs_norm
        if res <= tol:
            return x, it
        z = pre.apply_fft(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceFailure(
        f"PCG did not reach tol={tol} in {max_iter} iterations",
        residual=res,
        iterations=max_iter,
    )


def bpx_pcg_solve(
    L_mat: SparseSymMatrix,
    rhs: np.ndarray,
    tol: float,
    dim: int | None = None,
    level: int | None = None,
    max_iter: int = 10000,
) -> np.ndarray:
    x, _ = bpx_pcg(L_mat, rhs, tol, dim, level, max_iter)
    return x

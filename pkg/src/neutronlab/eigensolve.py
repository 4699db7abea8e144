"""Leading-eigenpair solvers for the discrete diffusion eigenproblem.

Two equivalent routes are provided.  The generalized route runs power
iteration on (L+A)^{-1} C directly and is what the convergence ladders use.
The symmetrized route builds the Hamiltonian action

    H = C^{1/2} (L+A)^{-1} C^{1/2}

whose largest eigenvalue k = 1/lambda is read out either by power iteration
(leading_eig) or through the rounded phase-estimation model (qpe_emulate).
C^{1/2} is the principal square root of the nonzero block of C, extended by
zero; the zero block is never touched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .assembly import SparseSymMatrix, assemble_LAC, mass_1d
from .bpx import bpx_pcg_solve, interp_multi
from .errors import ConvergenceFailure
from .geometry import MeshSpec, RegionMap, fission_node_mask

__all__ = [
    "EigenPair",
    "HamiltonianAction",
    "build_H",
    "leading_eig",
    "generalized_leading",
    "coarse_seed",
    "QpeResult",
    "qpe_emulate",
    "fission_weight",
]

DENSE_SOLVE_LIMIT = 3000


@dataclass
class EigenPair:
    """Leading generalized eigenpair with its reciprocal k = 1/lambda."""

    lambda_h: float
    k_h: float
    u: np.ndarray
    spec: MeshSpec | None = None
    residual: float = 0.0
    iterations: int = 0
    degenerate: bool = False


# ---------------------------------------------------------------------------
# square roots of C
# ---------------------------------------------------------------------------

class _DenseBlockSqrt:
    """Principal square root of the nonzero (fission) block, zero elsewhere."""

    def __init__(self, c: SparseSymMatrix):
        dense = c.to_dense()
        row_mass = np.abs(dense).sum(axis=1)
        self.mask = row_mass > 0
        self.idx = np.flatnonzero(self.mask)
        self.n = c.n
        block = dense[np.ix_(self.idx, self.idx)]
        if self.idx.size:
            w, v = scipy.linalg.eigh(block)
            w = np.clip(w, 0.0, None)
            self.root = (v * np.sqrt(w)) @ v.T
        else:
            self.root = np.zeros((0, 0))

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        if self.idx.size:
            out[self.idx] = self.root @ x[self.idx]
        return out


class _KronMassSqrt:
    """sqrt(c * M^(d)) via the Kronecker factorization of the mass matrix.

    Valid when nu_sigma_f is the same positive constant on every region, so
    C = c * M^(d) exactly; keeps fine-level seeds cheap.
    """

    def __init__(self, dim: int, level: int, coeff: float):
        m1 = mass_1d(level).to_dense()
        w, v = scipy.linalg.eigh(m1)
        self.r1 = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
        self.dim = dim
        self.nax = m1.shape[0]
        self.scale = float(coeff) ** (dim / 2.0)
        self.n = self.nax**dim
        self.mask = np.ones(self.n, dtype=bool)

    def apply(self, x: np.ndarray) -> np.ndarray:
        arr = x.reshape((self.nax,) * self.dim)
        for axis in range(self.dim):
            arr = np.moveaxis(arr, axis, 0)
            arr = np.moveaxis(
                (self.r1 @ arr.reshape(self.nax, -1)).reshape(arr.shape), 0, axis
            )
        return self.scale * arr.reshape(-1)


def _make_c_sqrt(c: SparseSymMatrix, spec: MeshSpec | None, map: RegionMap | None):
    if spec is not None and map is not None and spec.element_kind.value == "q1":
        nsf = map.uniform_coefficient("nu_sigma_f")
        if nsf is not None and nsf > 0:
            return _KronMassSqrt(spec.dim, spec.level, nsf)
    return _DenseBlockSqrt(c)


def _make_solver(
    s: SparseSymMatrix, tol: float, spec: MeshSpec | None
) -> Callable[[np.ndarray], np.ndarray]:
    if s.n <= DENSE_SOLVE_LIMIT:
        dense = s.to_dense()
        try:
            factor = scipy.linalg.cho_factor(dense)
        except scipy.linalg.LinAlgError as exc:
            raise ValueError("L + A must be positive definite") from exc
        return lambda rhs: scipy.linalg.cho_solve(factor, rhs)
    if spec is not None:
        return lambda rhs: bpx_pcg_solve(s, rhs, tol, spec.dim, spec.level)
    lu = scipy.sparse.linalg.splu(s.to_scipy().tocsc())
    return lu.solve


class HamiltonianAction:
    """Action of H = C^{1/2} (L+A)^{-1} C^{1/2} on coefficient vectors."""

    def __init__(self, L, A, C, solver_tol=1e-12, spec=None, map=None):
        self.n = L.n
        self.spec = spec
        self.c_sqrt = _make_c_sqrt(C, spec, map)
        s = SparseSymMatrix.from_scipy(L.to_scipy() + A.to_scipy())
        self.solve_s = _make_solver(s, solver_tol, spec)
        self.s_mat = s
        self.c_mat = C

    def apply(self, v: np.ndarray) -> np.ndarray:
        w = self.c_sqrt.apply(np.asarray(v, dtype=np.float64))
        return self.c_sqrt.apply(self.solve_s(w))

    def symmetry_defect(self, rng=None, probes: int = 3) -> float:
        rng = rng or np.random.default_rng(0)
        worst = 0.0
        for _ in range(probes):
            x = rng.standard_normal(self.n)
            y = rng.standard_normal(self.n)
            d = abs(x @ self.apply(y) - self.apply(x) @ y)
            worst = max(worst, d / (np.linalg.norm(x) * np.linalg.norm(y)))
        return worst


def build_H(L, A, C, solver_tol: float = 1e-12, spec=None, map=None) -> HamiltonianAction:
    return HamiltonianAction(L, A, C, solver_tol, spec, map)


# ---------------------------------------------------------------------------
# leading eigenpair
# ---------------------------------------------------------------------------

def _power_iteration(apply_op, v0, tol, max_iter):
    v = np.asarray(v0, dtype=np.float64)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("v0 must be nonzero")
    v = v / nrm
    k = 0.0
    res = np.inf
    best = np.inf
    since_best = 0
    for it in range(1, max_iter + 1):
        w = apply_op(v)
        wn = np.linalg.norm(w)
        if wn == 0.0:
            raise ConvergenceFailure(
                "operator annihilates the iterate (zero leading eigenvalue?)",
                residual=np.inf,
                iterations=it,
            )
        k = float(v @ w)
        res = float(np.linalg.norm(w - k * v))
        if res <= tol * max(abs(k), np.finfo(float).tiny):
            return k, w / wn, res, it
        # stagnation detector: residual stuck at the floating-point floor
        if res < 0.9 * best:
            best, since_best = res, 0
        else:
            since_best += 1
            if since_best > 500:
                raise ConvergenceFailure(
                    f"power iteration stagnated: residual {res:.3e} after {it} "
                    f"iterations at tol {tol:.1e} (eigengap or fp floor)",
                    residual=res,
                    iterations=it,
                )
        v = w / wn
    raise ConvergenceFailure(
        f"power iteration hit the iteration cap: residual {res:.3e} after "
        f"{max_iter} iterations at tol {tol:.1e}",
        residual=res,
        iterations=max_iter,
    )


def _second_eigenvalue_estimate(apply_op, v1, rng, iters=12):
    w = rng.standard_normal(v1.shape[0])
    w -= (w @ v1) * v1
    k2 = 0.0
    for _ in range(iters):
        w = apply_op(w)
        w -= (w @ v1) * v1
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        k2 = nw
        w /= nw
    return k2


def leading_eig(Hact: HamiltonianAction, v0: np.ndarray, tol: float) -> EigenPair:
    """Largest-k eigenpair of H by power iteration.

    The returned EigenPair carries the generalized eigenvector
    u = (L+A)^{-1} C^{1/2} v (normalized) and lambda = 1/k.
    """
    inner_tol = tol
    start = np.asarray(v0, dtype=np.float64)
    total_it = 0
    for _ in range(4):
        k, v, res, it = _power_iteration(Hact.apply, start, inner_tol, max_iter=100000)
        total_it += it
        if k <= 0:
            raise ConvergenceFailure("leading eigenvalue is not positive", residual=res)
        u = Hact.solve_s(Hact.c_sqrt.apply(v))
        u = u / np.linalg.norm(u)
        lam = 1.0 / k
        su = Hact.s_mat.matvec(u)
        gen_res = float(
            np.linalg.norm(su - lam * Hact.c_mat.matvec(u)) / np.linalg.norm(su)
        )
        if gen_res <= tol:
            break
        start, inner_tol = v, inner_tol / 100.0
    else:
        raise ConvergenceFailure(
            f"generalized residual {gen_res:.3e} stuck above tol {tol:.1e}",
            residual=gen_res,
            iterations=total_it,
        )
    k2 = _second_eigenvalue_estimate(Hact.apply, v, np.random.default_rng(7))
    degenerate = k2 > (1.0 - min(100.0 * tol, 0.1)) * k
    return EigenPair(lam, k, u, Hact.spec, gen_res, total_it, degenerate)


def _pencil_result(s_csr, c, x, tol, iterations, spec) -> EigenPair:
    x = x / np.linalg.norm(x)
    sx = s_csr @ x
    cx = c @ x
    k = float(x @ cx) / float(x @ sx)
    if k <= 0:
        raise ConvergenceFailure("leading k is not positive")
    lam = 1.0 / k
    res = float(np.linalg.norm(sx - lam * cx) / np.linalg.norm(sx))
    if res > tol:
        raise ConvergenceFailure(
            f"generalized residual {res:.3e} above tol {tol:.1e}",
            residual=res,
            iterations=iterations,
        )
    return EigenPair(lam, k, x, spec, res, iterations)


def generalized_leading(
    L, A, C, tol: float = 1e-12, v0=None, spec: MeshSpec | None = None,
    method: str = "lanczos",
) -> EigenPair:
    """Smallest-lambda pair of (L+A) u = lambda C u.

    Solves the pencil C u = k (L+A) u for its largest k.  Small systems go
    through a dense solve, larger ones through shift-invert-free Lanczos on
    the pencil (ARPACK, with sparse LU applications of (L+A)^{-1}); power
    iteration on (L+A)^{-1} C is available as method="power" and as the
    fallback.  The returned pair always satisfies the residual invariant
    ||(L+A)u - lambda C u|| <= tol ||(L+A)u||.
    """
    s = (L.to_scipy() + A.to_scipy()).tocsc()
    c = C.to_scipy()
    s_csr = s.tocsr()
    n = L.n
    if v0 is None:
        v0 = np.ones(n)  # deterministic; positive overlap with the fundamental

    if n <= 8:
        w, vecs = scipy.linalg.eigh(c.toarray(), s.toarray())
        return _pencil_result(s_csr, c, vecs[:, -1], tol, 1, spec)

    if method == "lanczos":
        try:
            _, vecs = scipy.sparse.linalg.eigsh(
                c, k=1, M=s, which="LA", tol=0,
                v0=np.asarray(v0, dtype=np.float64),
            )
            return _pencil_result(s_csr, c, vecs[:, 0], tol, 0, spec)
        except (scipy.sparse.linalg.ArpackError, ConvergenceFailure):
            pass  # fall through to power iteration

    lu = scipy.sparse.linalg.splu(s)

    def apply_op(x):
        return lu.solve(c @ x)

    start = np.asarray(v0, dtype=np.float64)
    inner_tol = max(tol * 1e-2, 1e-14)
    total_it = 0
    last_exc = None
    for _ in range(3):
        try:
            _, x, _, it = _power_iteration(apply_op, start, inner_tol, max_iter=100000)
        except ConvergenceFailure as exc:
            raise ConvergenceFailure(
                f"generalized solve failed: {exc}", residual=exc.residual,
                iterations=total_it + (exc.iterations or 0),
            ) from exc
        total_it += it
        try:
            return _pencil_result(s_csr, c, x, tol, total_it, spec)
        except ConvergenceFailure as exc:
            last_exc = exc
            start, inner_tol = x, max(inner_tol / 100.0, 1e-15)
    raise last_exc


# ---------------------------------------------------------------------------
# coarse-grid initial state
# ---------------------------------------------------------------------------

def coarse_seed(
    map: RegionMap,
    coarse_level: int,
    fine_level: int,
    solver_tol: float = 1e-12,
    allow_equal_levels: bool = False,
) -> np.ndarray:
    """Seed vector for phase estimation on the fine grid.

    Solves the coarse problem classically, interpolates the (positive-mean)
    eigenvector to the fine grid multilinearly, applies the fine-grid C^{1/2}
    and normalizes.
    """
    if coarse_level >= fine_level:
        if not (allow_equal_levels and coarse_level == fine_level):
            raise ValueError(
                f"coarse_level {coarse_level} must be below fine_level {fine_level}"
            )
        warnings.warn("equal coarse and fine levels: degenerate seed for testing")
    dim = map.dim
    spec_c = MeshSpec(dim, coarse_level)
    lc, ac, cc = assemble_LAC(spec_c, map)
    pair = generalized_leading(lc, ac, cc, tol=solver_tol, spec=spec_c)
    u_c = pair.u if pair.u.mean() >= 0 else -pair.u

    if fine_level > coarse_level:
        u_f = interp_multi(dim, coarse_level, fine_level).matrix @ u_c
    else:
        u_f = u_c
    u_f = u_f / np.linalg.norm(u_f)

    spec_f = MeshSpec(dim, fine_level)
    _, _, cf = assemble_LAC(spec_f, map)
    c_sqrt = _make_c_sqrt(cf, spec_f, map)
    v = c_sqrt.apply(u_f)
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValueError("seed has no weight on the fission region")
    return v / nv


class QpeResult(NamedTuple):
    k_estimate: float
    success_prob: float
    reliable: bool


def qpe_emulate(Hact: HamiltonianAction, seed: np.ndarray, epsilon: float) -> QpeResult:
    """Phase-estimation readout model: the leading eigenvalue rounded to the
    epsilon grid, with success probability = squared overlap of the seed with
    the leading eigenvector."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    seed = np.asarray(seed, dtype=np.float64)
    nrm = np.linalg.norm(seed)
    if nrm == 0:
        raise ValueError("seed must be nonzero")
    seed = seed / nrm
    # the readout eigenpair comes from a generic start vector so that an
    # orthogonal seed still yields the (unreliable) estimate
    v0 = np.random.default_rng(0).standard_normal(Hact.n)
    pair = leading_eig(Hact, v0, tol=epsilon / 10.0)
    vec = Hact.c_sqrt.apply(pair.u)
    vec = vec / np.linalg.norm(vec)
    overlap_sq = float(seed @ vec) ** 2
    k_est = round(pair.k_h / epsilon) * epsilon
    return QpeResult(k_est, overlap_sq, overlap_sq > 1e-3)


def fission_weight(u: np.ndarray, map: RegionMap, spec: MeshSpec) -> float:
    """Euclidean mass of u on nodes touching the fission region."""
    mask = fission_node_mask(map, spec)
    return float(np.linalg.norm(np.asarray(u)[mask]))

"""FEM matrix assembly on uniform dyadic meshes.

Everything here reduces to exact per-cell reference matrices (rationals times
a power of h) scattered into global sparse matrices:

* 1D mass (h/6)*tridiag(1,4,1) and 1D Laplacian (1/h)*tridiag(-1,2,-1),
* their tensor products M^(d) and P^(d) for d <= 3,
* the coefficient-weighted matrices L, A, C of the diffusion eigenproblem
  (Q1 bricks, Dirichlet boundary nodes eliminated by exclusion),
* the 8x8 single-cell mass matrix with spectrum {h^3/216 .. 27 h^3/216},
* a P1-triangle 2D assembly used by the convergence experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .errors import StraddleError
from .geometry import ElementKind, MeshSpec, RegionMap, _cell_coefficients

__all__ = [
    "SparseSymMatrix",
    "CellMatrix8",
    "mass_1d",
    "stiffness_1d",
    "tensor_mass",
    "tensor_stiffness",
    "assemble_LAC",
    "cell_mass_8x8",
    "assemble_2d_p1",
    "export_matrix_text",
    "read_matrix_text",
]

SYMMETRY_RTOL = 1e-13


@dataclass
class SparseSymMatrix:
    """Symmetric sparse matrix in compressed-row layout with sorted columns."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    symmetric: bool = True

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.symmetric:
            defect = self.symmetry_defect()
            if defect > SYMMETRY_RTOL:
                raise ValueError(f"matrix is not symmetric (relative defect {defect:.3e})")

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_scipy(cls, m, symmetric=True) -> "SparseSymMatrix":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        m.eliminate_zeros()
        return cls(m.shape[0], m.indptr, m.indices, m.data, symmetric)

    @classmethod
    def from_coo(cls, n, rows, cols, vals, symmetric=True) -> "SparseSymMatrix":
        m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n))
        return cls.from_scipy(m, symmetric)

    @classmethod
    def from_dense(cls, a, symmetric=True) -> "SparseSymMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=np.float64)), symmetric)

    # -- views and queries ---------------------------------------------------

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.data, self.indices, self.indptr), shape=(self.n, self.n)
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    @property
    def nnz(self) -> int:
        return int(self.data.shape[0])

    def max_row_nnz(self) -> int:
        return int(np.max(np.diff(self.indptr))) if self.n else 0

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return _kernels.csr_matvec(
            self.indptr, self.indices, self.data, np.asarray(x, dtype=np.float64)
        )

    def __matmul__(self, x):
        return self.matvec(x)

    def symmetry_defect(self) -> float:
        t = self.to_scipy()
        num = abs(t - t.T).max()
        den = abs(t).max() if self.nnz else 1.0
        return float(num / den) if den else 0.0

    def scaled(self, factor: float) -> "SparseSymMatrix":
        return SparseSymMatrix(
            self.n, self.indptr.copy(), self.indices.copy(),
            self.data * factor, self.symmetric,
        )


def _tridiag(n: int, off: float, diag: float) -> SparseSymMatrix:
    m = sp.diags([off * np.ones(n - 1), diag * np.ones(n), off * np.ones(n - 1)],
                 [-1, 0, 1], format="csr")
    return SparseSymMatrix.from_scipy(m)


def mass_1d(level: int) -> SparseSymMatrix:
    """(h/6) tridiag(1, 4, 1) on the 2^level - 1 interior nodes."""
    if level < 1:
        raise ValueError("level must be >= 1")
    h = 2.0**-level
    return _tridiag(2**level - 1, h / 6.0, 4.0 * h / 6.0)


def stiffness_1d(level: int) -> SparseSymMatrix:
    """(1/h) tridiag(-1, 2, -1) on the 2^level - 1 interior nodes."""
    if level < 1:
        raise ValueError("level must be >= 1")
    inv_h = 2.0**level
    return _tridiag(2**level - 1, -inv_h, 2.0 * inv_h)


def tensor_mass(dim: int, level: int) -> SparseSymMatrix:
    """M^(dim): dim-fold Kronecker power of the 1D mass matrix."""
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2 or 3")
    m1 = mass_1d(level).to_scipy()
    out = m1
    for _ in range(dim - 1):
        out = sp.kron(out, m1, format="csr")
    return SparseSymMatrix.from_scipy(out)


def tensor_stiffness(dim: int, level: int) -> SparseSymMatrix:
    """P^(dim) = sum over axes of P^(1) at that axis tensored with 1D masses."""
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2 or 3")
    m1 = mass_1d(level).to_scipy()
    p1 = stiffness_1d(level).to_scipy()
    total = None
    for axis in range(dim):
        term = None
        for a in range(dim):
            f = p1 if a == axis else m1
            term = f if term is None else sp.kron(term, f, format="csr")
        total = term if total is None else total + term
    return SparseSymMatrix.from_scipy(total)


# ---------------------------------------------------------------------------
# Q1 brick assembly with piecewise-constant coefficients
# ---------------------------------------------------------------------------

_M1_REF = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0   # integral of hats over one cell / h
_S1_REF = np.array([[1.0, -1.0], [-1.0, 1.0]])       # integral of hat slopes * h


def _q1_reference(dim: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell (mass, stiffness) reference matrices of size 2^dim."""
    mass = np.array([[1.0]])
    for _ in range(dim):
        mass = np.kron(mass, _M1_REF)
    mass = mass * h**dim
    stiff = np.zeros_like(mass)
    for axis in range(dim):
        term = np.array([[1.0]])
        for a in range(dim):
            term = np.kron(term, _S1_REF if a == axis else _M1_REF)
        stiff += term
    stiff = stiff * h ** (dim - 2)
    return mass, stiff


def _cell_corner_indices(spec: MeshSpec) -> tuple[np.ndarray, np.ndarray]:
    """Interior-node linear index of each cell corner, -1 for boundary corners.

    Returns (corner_lin, cells_flat_order); corner ordering matches the
    Kronecker ordering of the reference matrices (last axis fastest).
    """
    nc = spec.cells_per_axis
    n = spec.nodes_per_axis
    d = spec.dim
    axes = [np.arange(1, nc + 1)] * d
    grids = np.meshgrid(*axes, indexing="ij")
    cells = np.stack([g.reshape(-1) for g in grids], axis=1)  # (ncells, d), 1-based
    ncells = cells.shape[0]
    corner_lin = np.empty((ncells, 2**d), dtype=np.int64)
    for t_flat in range(2**d):
        offs = [(t_flat >> (d - 1 - a)) & 1 for a in range(d)]
        coords = cells - 1 + np.array(offs)  # global node coords in [0, nc]
        interior = np.all((coords >= 1) & (coords <= n), axis=1)
        lin = np.zeros(ncells, dtype=np.int64)
        for a in range(d):
            lin = lin * n + (coords[:, a] - 1)
        corner_lin[:, t_flat] = np.where(interior, lin, -1)
    return corner_lin, cells


def _scatter(n, corner_lin, cell_vals, ref) -> SparseSymMatrix:
    k = ref.shape[0]
    rows = np.repeat(corner_lin, k, axis=1).reshape(-1)
    cols = np.tile(corner_lin, (1, k)).reshape(-1)
    vals = (cell_vals[:, None, None] * ref[None, :, :]).reshape(-1)
    keep = (rows >= 0) & (cols >= 0)
    return SparseSymMatrix.from_coo(n, rows[keep], cols[keep], vals[keep])


def assemble_LAC(
    spec: MeshSpec, map: RegionMap
) -> tuple[SparseSymMatrix, SparseSymMatrix, SparseSymMatrix]:
    """Assemble diffusion (L), absorption (A) and fission (C) matrices.

    Q1 elements; every cell must lie inside one material region.  Boundary
    nodes are excluded from the index space, so the dimension is
    (2^level - 1)^dim.
    """
    if spec.element_kind != ElementKind.Q1:
        raise ValueError("assemble_LAC expects Q1 elements")
    coeffs = _cell_coefficients(map, spec)  # (3, nc, nc, ...) may raise StraddleError
    d_cell = coeffs[0].reshape(-1)
    sa_cell = coeffs[1].reshape(-1)
    nsf_cell = coeffs[2].reshape(-1)

    h = float(spec.h)
    mass_ref, stiff_ref = _q1_reference(spec.dim, h)
    corner_lin, _ = _cell_corner_indices(spec)
    n = spec.n_nodes

    L = _scatter(n, corner_lin, d_cell, stiff_ref)
    A = _scatter(n, corner_lin, sa_cell, mass_ref)
    C = _scatter(n, corner_lin, nsf_cell, mass_ref)
    return L, A, C


@dataclass(frozen=True)
class CellMatrix8:
    """The 8x8 trilinear mass matrix of a single cube of side h."""

    matrix: np.ndarray
    h: float


def cell_mass_8x8(h: float) -> CellMatrix8:
    """Single-cube mass matrix (h^3/216) * kron^3 [[2,1],[1,2]].

    Eigenvalues are (h/6)^3 * {1,3}^3: minimum h^3/216, maximum 27 h^3/216,
    condition number 27.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    b = np.array([[2.0, 1.0], [1.0, 2.0]])
    m = np.kron(np.kron(b, b), b) * (h**3 / 216.0)
    return CellMatrix8(m, h)


# ---------------------------------------------------------------------------
# P1 triangles (2D), all cells split along the lower-left -> upper-right
# diagonal
# ---------------------------------------------------------------------------

def _p1_triangle_matrices(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(mass, stiffness) for a P1 triangle with given 3x2 vertex array."""
    x, y = vertices[:, 0], vertices[:, 1]
    area = 0.5 * abs(
        (x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0])
    )
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    stiff = (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)
    mass = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
    return mass, stiff


def assemble_2d_p1(
    level: int, map: RegionMap
) -> tuple[SparseSymMatrix, SparseSymMatrix, SparseSymMatrix]:
    """P1 assembly of (L, A, C) on the criss-crossed square mesh.

    Each square cell carries one material; its two triangles inherit it.
    """
    spec = MeshSpec(2, level, ElementKind.P1_TRIANGLE)
    coeffs = _cell_coefficients(map, spec)
    d_cell = coeffs[0].reshape(-1)
    sa_cell = coeffs[1].reshape(-1)
    nsf_cell = coeffs[2].reshape(-1)

    h = float(spec.h)
    nc = spec.cells_per_axis
    n = spec.nodes_per_axis

    # local corners of the unit cell: a=(0,0), b=(1,0), c=(1,1), d=(0,1)
    pts = h * np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = ((0, 1, 2), (0, 2, 3))
    local = [(_p1_triangle_matrices(pts[list(t)]), t) for t in tris]

    # global 0-based corner coords per cell, corner order (a, b, c, d)
    cx, cy = np.meshgrid(np.arange(nc), np.arange(nc), indexing="ij")
    cx, cy = cx.reshape(-1), cy.reshape(-1)
    corner_xy = [(0, 0), (1, 0), (1, 1), (0, 1)]
    corner_lin = np.empty((cx.shape[0], 4), dtype=np.int64)
    for q, (ox, oy) in enumerate(corner_xy):
        gx, gy = cx + ox, cy + oy
        interior = (gx >= 1) & (gx <= n) & (gy >= 1) & (gy <= n)
        corner_lin[:, q] = np.where(interior, (gx - 1) * n + (gy - 1), -1)

    rows, cols = [], []
    vals = {"L": [], "A": [], "C": []}
    for (mass, stiff), t in local:
        idx = corner_lin[:, list(t)]  # (ncells, 3)
        r = np.repeat(idx, 3, axis=1).reshape(-1)
        c = np.tile(idx, (1, 3)).reshape(-1)
        rows.append(r)
        cols.append(c)
        vals["L"].append((d_cell[:, None, None] * stiff[None]).reshape(-1))
        vals["A"].append((sa_cell[:, None, None] * mass[None]).reshape(-1))
        vals["C"].append((nsf_cell[:, None, None] * mass[None]).reshape(-1))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    keep = (rows >= 0) & (cols >= 0)
    ntot = spec.n_nodes
    out = []
    for key in ("L", "A", "C"):
        v = np.concatenate(vals[key])
        out.append(SparseSymMatrix.from_coo(ntot, rows[keep], cols[keep], v[keep]))
    return tuple(out)


# ---------------------------------------------------------------------------
# coordinate-triplet text export
# ---------------------------------------------------------------------------

def export_matrix_text(m: SparseSymMatrix, path) -> None:
    """Write 'n nnz' header then 'row col value' lines (0-based indices)."""
    coo = m.to_scipy().tocoo()
    with open(path, "w") as f:
        f.write(f"{m.n} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            f.write(f"{r} {c} {float(v)!r}\n")


def read_matrix_text(path) -> SparseSymMatrix:
    with open(path) as f:
        first = f.readline().split()
        n, nnz = int(first[0]), int(first[1])
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        for i in range(nnz):
            r, c, v = f.readline().split()
            rows[i], cols[i], vals[i] = int(r), int(c), float(v)
    return SparseSymMatrix.from_coo(n, rows, cols, vals)

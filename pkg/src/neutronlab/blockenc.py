"""Matrix-level emulation of the block-encoding constructions.

Every quantum object here is an explicit dense unitary.  A block encoding is
stored in a canonical register order (ancillas as the most significant
qubits), so the encoded block is always the top-left 2^s x 2^s corner of the
unitary restricted to ancilla zero:

    target ~= alpha * U[:2^s, :2^s]   (zero-padded)

The P/Q oracle pair for the one-level interpolation operator follows the
row/column-oracle recipe: P prepares column superpositions with amplitudes
sqrt(|A_jk| / c_max) plus a slack branch, Q prepares row superpositions with
r_max = 1 and slack amplitude sqrt(1/2) on the two boundary rows, and
swap_rc Q^dagger P is a (sqrt(r_max c_max), b+3, 0)-encoding of the
zero-padded operator.  Oracles are specified on their meaningful input
states and completed to full unitaries by orthogonal completion; only the
specified actions enter the encoded block.

Working register order during oracle construction is

    data-row (b qubits) x data-col (b) x r_slack x c_slack x flag,

with the data-col register as the encoded system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assembly import SparseSymMatrix
from .bpx import BpxOp, _interp_matrix, n_cumulative
from .errors import EncodingDefect, ResourceLimitError

__all__ = [
    "BlockEncoding",
    "StatePrepPair",
    "oracle_P_interp",
    "oracle_Q_interp",
    "combine_PQ",
    "perm_embed_fixup",
    "perm_col_index",
    "perm_col_index_inv",
    "embed_level_shift",
    "embedded_interp",
    "multiply_encodings",
    "dilation_encoding",
    "uniform_state_prep_pair",
    "lcu_assemble_Fhat",
    "load_sparse_encoding",
    "projector_encoding",
    "hamiltonian_chain_emulate",
    "FactorReport",
    "verification_report",
]

UNITARITY_TOL = 1e-10
ORACLE_SIZE_GUARD = 64
LCU_DIM_GUARD = 4096


def _qubits_for(n: int) -> int:
    return max(1, (n - 1).bit_length()) if n > 1 else 0


def unitarity_defect(u: np.ndarray) -> float:
    """Frobenius norm of U^dagger U - I (upper bound on the spectral norm)."""
    eye = np.eye(u.shape[0])
    return float(np.linalg.norm(u.conj().T @ u - eye))


@dataclass
class BlockEncoding:
    """(alpha, q, epsilon) block encoding in canonical register order."""

    unitary: np.ndarray
    system_qubits: int
    ancilla_qubits: int
    alpha: float
    target: np.ndarray
    epsilon_claim: float = 0.0

    @property
    def system_dim(self) -> int:
        return 2**self.system_qubits

    def block(self) -> np.ndarray:
        d = self.system_dim
        return self.unitary[:d, :d]

    def extracted(self) -> np.ndarray:
        """alpha * block, cropped to the target's shape."""
        tr, tc = self.target.shape
        return self.alpha * self.block()[:tr, :tc]

    def block_defect(self) -> float:
        d = self.system_dim
        padded = np.zeros((d, d))
        tr, tc = self.target.shape
        padded[:tr, :tc] = self.target
        return float(np.linalg.norm(padded - self.alpha * self.block(), 2))

    def unitarity_defect(self) -> float:
        return unitarity_defect(self.unitary)

    def verify(self, tol: float, name: str = "encoding") -> "BlockEncoding":
        ud = self.unitarity_defect()
        if ud > UNITARITY_TOL:
            raise EncodingDefect(
                f"{name}: unitarity defect {ud:.3e} exceeds {UNITARITY_TOL}",
                defect=ud,
            )
        bd = self.block_defect()
        if bd > tol:
            raise EncodingDefect(
                f"{name}: block defect {bd:.3e} exceeds tolerance {tol:.1e}",
                defect=bd,
            )
        self.epsilon_claim = max(bd, 1e-300)
        return self


@dataclass
class StatePrepPair:
    """Unitary pair (P_L, P_R) with beta such that beta * conj(c_j) d_j
    reproduces a target coefficient vector."""

    left: np.ndarray
    right: np.ndarray
    beta: float
    width: int

    def coefficient_defect(self, y: np.ndarray) -> float:
        c = self.left[:, 0]
        d = self.right[:, 0]
        prod = self.beta * np.conj(c) * d
        m = y.shape[0]
        err = float(np.abs(prod[:m] - y).sum())
        err += float(np.abs(prod[m:]).sum())
        return err


# ---------------------------------------------------------------------------
# unitary completion and register bookkeeping
# ---------------------------------------------------------------------------

def _complete_unitary(dim: int, cols: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Unitary whose column cols[i] equals vecs[:, i]; the remaining columns
    are an orthonormal complement assigned in index order (deterministic)."""
    k = cols.shape[0]
    gram = vecs.conj().T @ vecs
    if np.linalg.norm(gram - np.eye(k)) > 1e-12:
        raise ValueError("specified oracle columns are not orthonormal")
    q = np.linalg.qr(vecs, mode="complete")[0]
    u = np.zeros((dim, dim), dtype=vecs.dtype)
    u[:, cols] = vecs
    rest = np.setdiff1d(np.arange(dim), cols)
    u[:, rest] = q[:, k:]
    return u


def _register_permutation(dims: list[int], order: list[int]) -> np.ndarray:
    """p with p[new_flat] = old_flat after reordering registers to `order`."""
    k = len(dims)
    strides = np.ones(k, dtype=np.int64)
    for i in range(k - 2, -1, -1):
        strides[i] = strides[i + 1] * dims[i + 1]
    grids = np.indices([dims[o] for o in order]).reshape(k, -1)
    old = np.zeros(grids.shape[1], dtype=np.int64)
    for pos, o in enumerate(order):
        old += grids[pos] * strides[o]
    return old


def _embed_on_registers(u: np.ndarray, dims: list[int], active: list[int]) -> np.ndarray:
    """Lift u (acting on the `active` registers, in that order) to the full
    register space, identity elsewhere."""
    order = list(active) + [i for i in range(len(dims)) if i not in active]
    p = _register_permutation(dims, order)
    rest = 1
    for i in range(len(dims)):
        if i not in active:
            rest *= dims[i]
    big = np.kron(u, np.eye(rest))
    inv = np.argsort(p)
    return big[np.ix_(inv, inv)]


# ---------------------------------------------------------------------------
# P/Q oracles for the one-level interpolation operator
# ---------------------------------------------------------------------------

def _pq_space(m: int):
    """Index helpers for registers (r, c, r_slack, c_slack, flag)."""
    dim = 8 * m * m

    def idx(ir, ic, irs, ics, if_):
        return ((((ir * m + ic) * 2 + irs) * 2 + ics) * 2 + if_)

    return dim, idx


def _oracle_guard(l: int, L: int) -> int:
    if not (1 <= l <= L):
        raise ValueError(f"need 1 <= l <= L, got l={l}, L={L}")
    m = 2 ** (L + 1)
    if m > ORACLE_SIZE_GUARD:
        raise ResourceLimitError(
            f"oracle dimension m={m} exceeds guard {ORACLE_SIZE_GUARD}"
        )
    return m


def oracle_P_interp(l: int, L: int) -> np.ndarray:
    """Column oracle for the zero-padded one-level interpolation operator.

    For k below the coarse node count the r register receives the normalized
    column superposition sqrt(1/4), sqrt(1/2), sqrt(1/4) on rows 2k, 2k+1,
    2k+2 (c_max = 2, column sums are exactly c_max so there is no slack);
    larger k route to the flag branch.
    """
    m = _oracle_guard(l, L)
    n_coarse = 2**l - 1
    dim, idx = _pq_space(m)
    cols, vecs = [], []
    for k in range(m):
        for bcs in (0, 1):
            cols.append(idx(0, k, 0, bcs, 0))
            v = np.zeros(dim)
            if k < n_coarse:
                v[idx(2 * k, k, 0, bcs, 0)] = 0.5
                v[idx(2 * k + 1, k, 0, bcs, 0)] = math.sqrt(0.5)
                v[idx(2 * k + 2, k, 0, bcs, 0)] = 0.5
            else:
                v[idx(0, k, 0, bcs, 1)] = 1.0
            vecs.append(v)
    return _complete_unitary(dim, np.array(cols), np.array(vecs).T)


def oracle_Q_interp(l: int, L: int) -> np.ndarray:
    """Row oracle: r_max = 1; rows 0 and 2^(l+1)-2 carry sqrt(1/2) slack,
    odd rows map deterministically to (j-1)/2, interior even rows split
    between their two coarse neighbours."""
    m = _oracle_guard(l, L)
    n_fine = 2 ** (l + 1) - 1
    dim, idx = _pq_space(m)
    cols, vecs = [], []
    for j in range(m):
        for brs in (0, 1):
            cols.append(idx(j, 0, brs, 0, 0))
            v = np.zeros(dim)
            if j >= n_fine:
                v[idx(j, 0, brs, 0, 1)] = 1.0
            elif j == 0:
                v[idx(j, 0, brs, 0, 0)] = math.sqrt(0.5)
                v[idx(j, 0, brs, 1, 0)] = math.sqrt(0.5)
            elif j == n_fine - 1:
                v[idx(j, 2**l - 2, brs, 0, 0)] = math.sqrt(0.5)
                v[idx(j, 0, brs, 1, 0)] = math.sqrt(0.5)
            elif j % 2 == 1:
                v[idx(j, (j - 1) // 2, brs, 0, 0)] = 1.0
            else:
                v[idx(j, j // 2 - 1, brs, 0, 0)] = math.sqrt(0.5)
                v[idx(j, j // 2, brs, 0, 0)] = math.sqrt(0.5)
            vecs.append(v)
    return _complete_unitary(dim, np.array(cols), np.array(vecs).T)


def _swap_rc(m: int) -> np.ndarray:
    dim, idx = _pq_space(m)
    p = np.empty(dim, dtype=np.int64)
    for ir in range(m):
        for ic in range(m):
            base_in = ((ir * m + ic) * 8)
            base_out = ((ic * m + ir) * 8)
            for t in range(8):
                p[base_out + t] = base_in + t
    s = np.zeros((dim, dim))
    s[np.arange(dim), p] = 1.0
    return s


def _canonicalize_pq(u: np.ndarray, m: int) -> np.ndarray:
    """Reorder registers from (r, c, rs, cs, f) to (anc = (r, rs, cs, f), c)."""
    dim = 8 * m * m
    a = np.repeat(np.arange(8 * m), m)
    ic = np.tile(np.arange(m), 8 * m)
    if_ = a & 1
    ics = (a >> 1) & 1
    irs = (a >> 2) & 1
    ir = a >> 3
    orig = (((ir * m + ic) * 2 + irs) * 2 + ics) * 2 + if_
    return u[np.ix_(orig, orig)]


def combine_PQ(
    P: np.ndarray, Q: np.ndarray, target: np.ndarray, tol: float = 1e-8
) -> BlockEncoding:
    """swap_rc Q^dagger P packaged as a block encoding of the zero-padded
    target, with alpha = sqrt(r_max c_max) from the target's absolute row and
    column sums."""
    if P.shape != Q.shape:
        raise ValueError("P and Q must act on the same space")
    dim = P.shape[0]
    m = math.isqrt(dim // 8)
    if 8 * m * m != dim:
        raise ValueError(f"oracle dimension {dim} is not 8 m^2")
    if target.shape[0] > m or target.shape[1] > m:
        raise ValueError("target does not fit the oracle data register")
    r_max = float(np.abs(target).sum(axis=1).max())
    c_max = float(np.abs(target).sum(axis=0).max())
    alpha = math.sqrt(r_max * c_max)
    u = _swap_rc(m) @ Q.conj().T @ P
    u = _canonicalize_pq(u, m)
    b = _qubits_for(m)
    be = BlockEncoding(u, b, b + 3, alpha, np.asarray(target, dtype=float))
    return be.verify(tol, "combine_PQ")


# ---------------------------------------------------------------------------
# permutation fixups for zero-embedded tensor products
# ---------------------------------------------------------------------------

def perm_col_index(k: int, n_a: int, n_b: int, big_b: int) -> int:
    """Forward index map placing the compact tensor index into the embedded
    product space."""
    if k < n_a * n_b:
        t, t2 = divmod(k, n_b)
        return t * big_b + t2
    if big_b > n_b and k < n_a * big_b:
        t, t2 = divmod(k - n_a * n_b, big_b - n_b)
        return t * big_b + n_b + t2
    return k


def perm_col_index_inv(k: int, n_a: int, n_b: int, big_b: int) -> int:
    """Inverse of perm_col_index."""
    if k < n_a * big_b:
        t, t2 = divmod(k, big_b)
        if t2 < n_b:
            return t * n_b + t2
        return n_a * n_b + t * (big_b - n_b) + (t2 - n_b)
    return k


def _perm_matrix_forward(total: int, n_a: int, n_b: int, big_b: int) -> np.ndarray:
    p = np.zeros((total, total))
    for k in range(total):
        p[perm_col_index(k, n_a, n_b, big_b), k] = 1.0
    return p


def perm_embed_fixup(dims) -> tuple[np.ndarray, np.ndarray]:
    """Permutations with (A x B x ...)' = P_r (A' x B' x ...) P_c.

    dims is a sequence of ((outer_rows, outer_cols), (inner_rows, inner_cols))
    per factor; exactly 0/1-valued matrices are returned.
    """
    dims = list(dims)
    if not dims:
        raise ValueError("need at least one factor")
    (big_r, big_c), (in_r, in_c) = dims[0]
    if not (0 < in_r <= big_r and 0 < in_c <= big_c):
        raise ValueError("inner shape must fit inside outer shape")
    p_r = np.eye(big_r)
    p_c = np.eye(big_c)
    acc_inner = (in_r, in_c)
    acc_outer = (big_r, big_c)
    for (obig, oin) in dims[1:]:
        (mb, nb) = obig
        (mi, ni) = oin
        if not (0 < mi <= mb and 0 < ni <= nb):
            raise ValueError("inner shape must fit inside outer shape")
        row_perm = _perm_matrix_forward(acc_outer[0] * mb, acc_inner[0], mi, mb)
        col_perm = _perm_matrix_forward(acc_outer[1] * nb, acc_inner[1], ni, nb)
        p_r = row_perm.T @ np.kron(p_r, np.eye(mb))
        p_c = np.kron(p_c, np.eye(nb)) @ col_perm
        acc_inner = (acc_inner[0] * mi, acc_inner[1] * ni)
        acc_outer = (acc_outer[0] * mb, acc_outer[1] * nb)
    return p_r, p_c


# ---------------------------------------------------------------------------
# level shifts and the preconditioner LCU
# ---------------------------------------------------------------------------

def embedded_interp(d: int, l: int, l_to: int, L: int) -> np.ndarray:
    """The interpolation operator placed at level-block (l_to, l) of the
    cumulative N_L^(d)-dimensional space."""
    n_tot = n_cumulative(d, L)
    out = np.zeros((n_tot, n_tot))
    r0 = n_cumulative(d, l_to - 1)
    c0 = n_cumulative(d, l - 1)
    blk = _interp_matrix(d, l, l_to)
    out[r0 : r0 + blk.shape[0], c0 : c0 + blk.shape[1]] = blk
    return out


def _mod_shift_perm(dim: int, shift: int) -> np.ndarray:
    p = np.zeros((dim, dim))
    src = np.arange(dim)
    p[(src + shift) % dim, src] = 1.0
    return p


def embed_level_shift(U: BlockEncoding, l: int, d: int, L: int) -> BlockEncoding:
    """Conjugate a one-level encoding by modular add/subtract permutations so
    the block sits at level-block (l+1, l) of the cumulative space.  alpha is
    unchanged (permutations are unitary)."""
    n_tot = n_cumulative(d, L)
    dim_s = U.system_dim
    if dim_s < n_tot:
        raise ValueError(
            f"system dimension {dim_s} cannot hold the {n_tot}-point cumulative space"
        )
    off_col = n_cumulative(d, l - 1)
    off_row = n_cumulative(d, l)
    p_sub = _mod_shift_perm(dim_s, -off_col)
    p_add = _mod_shift_perm(dim_s, off_row)
    anc = np.eye(2**U.ancilla_qubits)
    u = np.kron(anc, p_add) @ U.unitary @ np.kron(anc, p_sub)
    target = embedded_interp(d, l, l + 1, L)
    be = BlockEncoding(u, U.system_qubits, U.ancilla_qubits, U.alpha, target)
    return be.verify(max(U.epsilon_claim * 10, 1e-8), "embed_level_shift")


def multiply_encodings(
    be1: BlockEncoding, be2: BlockEncoding, tol: float = 1e-8
) -> BlockEncoding:
    """Product encoding of target1 @ target2; alphas multiply, ancillas add."""
    if be1.system_qubits != be2.system_qubits:
        raise ValueError("system registers differ")
    s = be1.system_qubits
    dims = [2**be1.ancilla_qubits, 2**be2.ancilla_qubits, 2**s]
    a1 = _embed_on_registers(be1.unitary, dims, [0, 2])
    a2 = _embed_on_registers(be2.unitary, dims, [1, 2])
    u = a1 @ a2
    target = be1.target @ be2.target
    be = BlockEncoding(
        u, s, be1.ancilla_qubits + be2.ancilla_qubits,
        be1.alpha * be2.alpha, target,
    )
    return be.verify(tol, "multiply_encodings")


def dilation_encoding(
    target: np.ndarray, alpha: float, system_qubits: int | None = None
) -> BlockEncoding:
    """Minimal (alpha, 1, ~0) encoding of target via the two-block unitary
    dilation of the contraction target/alpha."""
    target = np.asarray(target, dtype=float)
    tr, tc = target.shape
    s = system_qubits if system_qubits is not None else _qubits_for(max(tr, tc))
    d = 2**s
    if tr > d or tc > d:
        raise ValueError("target does not fit the system register")
    b = np.zeros((d, d))
    b[:tr, :tc] = target / alpha
    w, sig, vt = np.linalg.svd(b)
    if sig.size and sig[0] > 1.0 + 1e-12:
        raise ValueError(
            f"alpha={alpha} is too small: block norm {sig[0]:.6f} exceeds 1"
        )
    sig = np.clip(sig, 0.0, 1.0)
    comp = np.sqrt(1.0 - sig**2)
    u = np.zeros((2 * d, 2 * d))
    u[:d, :d] = (w * sig) @ vt
    u[:d, d:] = (w * comp) @ w.T
    u[d:, :d] = (vt.T * comp) @ vt
    u[d:, d:] = -(vt.T * sig) @ w.T
    be = BlockEncoding(u, s, 1, alpha, target)
    return be.verify(1e-10, "dilation_encoding")


def uniform_state_prep_pair(terms: int) -> StatePrepPair:
    """State-preparation pair for the all-ones vector of length `terms`:
    both unitaries send |0> to the uniform superposition over the first
    `terms` basis states, so beta = terms."""
    if terms < 1:
        raise ValueError("terms must be >= 1")
    b = _qubits_for(terms)
    dim = 2**b
    col = np.zeros(dim)
    col[:terms] = 1.0 / math.sqrt(terms)
    u = _complete_unitary(dim, np.array([0]), col.reshape(-1, 1))
    return StatePrepPair(u, u, float(terms), b)


def lcu_assemble_Fhat(d: int, L: int, tol: float = 1e-8) -> BlockEncoding:
    """Linear combination of the level encodings G_l = 2^(-l(2-d)/2) I-hat
    with the uniform state-preparation pair; alpha = L * 2^(dL/2).

    Each level term is carried by a (2^(dL/2), 1, ~0) encoding (the
    subnormalized level encoding), and the select unitary applies term l
    controlled on the preparation register.
    """
    from .bpx import bpx_build  # local import to avoid cycle at module load

    bpx = bpx_build(d, L)
    n_tot = bpx.fhat.shape[0]
    s = _qubits_for(n_tot)
    prep = uniform_state_prep_pair(L)
    b = prep.width
    total_dim = 2 ** (b + 1 + s)
    if total_dim > LCU_DIM_GUARD:
        raise ResourceLimitError(
            f"LCU dimension {total_dim} exceeds guard {LCU_DIM_GUARD}"
        )
    alpha_lvl = 2.0 ** (d * L / 2.0)
    terms = []
    for l in range(1, L + 1):
        w = 2.0 ** (-l * (2 - d) / 2.0)
        terms.append(dilation_encoding(w * embedded_interp(d, l, L, L), alpha_lvl, s))
    blk = 2 ** (1 + s)
    w_sel = np.eye(total_dim)
    for j, term in enumerate(terms):
        w_sel[j * blk : (j + 1) * blk, j * blk : (j + 1) * blk] = term.unitary
    sys_eye = np.eye(blk)
    u = np.kron(prep.left.conj().T, sys_eye) @ w_sel @ np.kron(prep.right, sys_eye)
    alpha = prep.beta * alpha_lvl
    be = BlockEncoding(u, s, b + 1, alpha, bpx.fhat)
    return be.verify(tol, "lcu_assemble_Fhat")


# ---------------------------------------------------------------------------
# sparse data loading and projectors
# ---------------------------------------------------------------------------

def _generic_pq_encoding(
    b_mat: np.ndarray, s_row: int, s_col: int, tol: float, name: str
) -> BlockEncoding:
    n = b_mat.shape[0]
    m = 2 ** _qubits_for(n)
    dim, idx = _pq_space(m)
    row_abs = np.abs(b_mat).sum(axis=1)
    col_abs = np.abs(b_mat).sum(axis=0)
    if row_abs.max() > s_row + 1e-12 or col_abs.max() > s_col + 1e-12:
        raise ValueError("row/column mass exceeds the declared sparsity bound")

    cols, vecs = [], []
    for k in range(m):
        for bcs in (0, 1):
            cols.append(idx(0, k, 0, bcs, 0))
            v = np.zeros(dim)
            if k < n:
                for j in np.flatnonzero(b_mat[:, k]):
                    amp = math.sqrt(abs(b_mat[j, k]) / s_col)
                    v[idx(j, k, 0, bcs, 0)] = math.copysign(amp, b_mat[j, k])
                slack = 1.0 - col_abs[k] / s_col
                if slack > 1e-15:
                    v[idx(0, k, 1, bcs, 0)] = math.sqrt(slack)
            else:
                v[idx(0, k, 0, bcs, 1)] = 1.0
            vecs.append(v)
    p_or = _complete_unitary(dim, np.array(cols), np.array(vecs).T)

    cols, vecs = [], []
    for j in range(m):
        for brs in (0, 1):
            cols.append(idx(j, 0, brs, 0, 0))
            v = np.zeros(dim)
            if j < n:
                for k in np.flatnonzero(b_mat[j, :]):
                    v[idx(j, k, brs, 0, 0)] = math.sqrt(abs(b_mat[j, k]) / s_row)
                slack = 1.0 - row_abs[j] / s_row
                if slack > 1e-15:
                    v[idx(j, 0, brs, 1, 0)] = math.sqrt(slack)
            else:
                v[idx(j, 0, brs, 0, 1)] = 1.0
            vecs.append(v)
    q_or = _complete_unitary(dim, np.array(cols), np.array(vecs).T)

    u = _canonicalize_pq(_swap_rc(m) @ q_or.conj().T @ p_or, m)
    alpha = math.sqrt(s_row * s_col)
    be = BlockEncoding(u, _qubits_for(m), _qubits_for(m) + 3, alpha, b_mat)
    return be.verify(tol, name)


def load_sparse_encoding(
    M: SparseSymMatrix, norm: float, sparsity: int | None = None, tol: float = 1e-8
) -> BlockEncoding:
    """Sparse-access style encoding of M/norm with alpha = sqrt(s_r s_c).

    sparsity defaults to the observed maximum nonzeros per row; pass 3^dim to
    match the nominal stencil bound of the assembled matrices.
    """
    if M.n > ORACLE_SIZE_GUARD:
        raise ResourceLimitError(
            f"matrix dimension {M.n} exceeds guard {ORACLE_SIZE_GUARD}"
        )
    b_mat = M.to_dense() / norm
    spec_norm = np.linalg.norm(b_mat, 2)
    if spec_norm > 1.0 + 1e-12:
        raise ValueError(
            f"norm={norm} is too small: scaled matrix has spectral norm "
            f"{spec_norm:.6f} > 1"
        )
    s = sparsity if sparsity is not None else max(1, M.max_row_nnz())
    return _generic_pq_encoding(b_mat, s, s, tol, "load_sparse_encoding")


def projector_encoding(mask: np.ndarray) -> BlockEncoding:
    """(1, 1, 0) encoding of the diagonal projector onto True positions, as a
    permutation: the ancilla flips exactly on the complement."""
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[0]
    s = _qubits_for(n)
    d = 2**s
    z = np.ones(d, dtype=np.int64)
    z[:n] = (~mask).astype(np.int64)
    u = np.zeros((2 * d, 2 * d))
    for i in range(d):
        for a in (0, 1):
            u[(a ^ z[i]) * d + i, a * d + i] = 1.0
    be = BlockEncoding(u, s, 1, 1.0, np.diag(mask.astype(float)))
    return be.verify(1e-12, "projector_encoding")


# ---------------------------------------------------------------------------
# the four-factor Hamiltonian chain
# ---------------------------------------------------------------------------

@dataclass
class FactorReport:
    name: str
    alpha: float
    defect: float
    note: str = ""


def _sqrt_psd(mat: np.ndarray, factor_index: int) -> np.ndarray:
    import scipy.linalg

    w, v = scipy.linalg.eigh(mat)
    if w.min() < -1e-10 * max(abs(w.max()), 1.0):
        raise ValueError(
            f"factor {factor_index}: matrix is not positive semidefinite "
            f"(min eigenvalue {w.min():.3e})"
        )
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def hamiltonian_chain_emulate(
    L: SparseSymMatrix,
    A: SparseSymMatrix,
    C: SparseSymMatrix,
    F: BpxOp,
) -> tuple[np.ndarray, list[FactorReport]]:
    """Numerically evaluate the four-factor decomposition

        H = (C/h^d)^{1/2} (I + h^d F (F^T L F)^+ F^T A/h^d)^{-1}
            (h^{d/2} F)(F^T L F)^+ (h^{d/2} F)^T (C/h^d)^{1/2}

    with the fission square root taken through the identity-padded matrix
    and projected back onto the nonzero block.  Returns the product and a
    ledger of per-factor normalizations and measured defects.
    """
    d = F.dim
    lev = F.top_level
    if F.f.shape[0] != L.n:
        raise ValueError("preconditioner level does not match matrix dimension")
    hd = (2.0**-lev) ** d
    l_dense = L.to_dense()
    a_dense = A.to_dense()
    c_dense = C.to_dense()
    n = L.n

    mask = np.abs(c_dense).sum(axis=1) > 0
    pi_c = np.diag(mask.astype(float))
    c_padded = c_dense / hd + np.diag((~mask).astype(float))
    s1_full = _sqrt_psd(c_padded, 1)
    f1 = pi_c @ s1_full @ pi_c
    sqrt_defect = float(np.linalg.norm(s1_full @ s1_full - c_padded, 2))

    ftlf = F.f.T @ l_dense @ F.f
    p3 = hd * (F.f @ np.linalg.pinv(ftlf, rcond=1e-12) @ F.f.T)
    try:
        l_inv = np.linalg.inv(l_dense)
    except np.linalg.LinAlgError as exc:
        raise ValueError("factor 3: stiffness matrix is singular") from exc
    flft_defect = float(
        np.linalg.norm(p3 - hd * l_inv, 2) / np.linalg.norm(hd * l_inv, 2)
    )

    m2 = np.eye(n) + p3 @ (a_dense / hd)
    try:
        f2 = np.linalg.inv(m2)
    except np.linalg.LinAlgError as exc:
        raise ValueError("factor 2: fast-inversion term is singular") from exc
    inv_defect = float(np.linalg.norm(m2 @ f2 - np.eye(n), 2))

    h_emulated = f1 @ f2 @ p3 @ f1

    report = [
        FactorReport(
            "(C/h^d)^{1/2}", float(np.linalg.norm(f1, 2)), sqrt_defect,
            "square root of the identity-padded fission matrix, projected",
        ),
        FactorReport(
            "(I + L^{-1}A)^{-1}", float(np.linalg.norm(f2, 2)), inv_defect,
            "fast-inversion rearrangement, O(1)-conditioned",
        ),
        FactorReport(
            "h^d F (F^T L F)^+ F^T", float(np.linalg.norm(p3, 2)), flft_defect,
            "pseudoinverse route to h^d L^{-1}",
        ),
        FactorReport(
            "(C/h^d)^{1/2}", float(np.linalg.norm(f1, 2)), sqrt_defect,
            "same factor as the first",
        ),
    ]
    return h_emulated, report


def verification_report(items) -> str:
    """Structured text report: one line per (name, BlockEncoding)."""
    lines = []
    for name, be in items:
        lines.append(
            f"{name}: alpha={be.alpha:.6g} q={be.ancilla_qubits} "
            f"defect={be.block_defect():.3e} unitarity={be.unitarity_defect():.3e}"
        )
    return "\n".join(lines) + "\n"

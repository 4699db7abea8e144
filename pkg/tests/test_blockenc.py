import math

import numpy as np
import pytest

from neutronlab import blockenc as bq
from neutronlab.assembly import SparseSymMatrix, assemble_LAC
from neutronlab.bpx import bpx_build, interp_multi, n_cumulative
from neutronlab.errors import EncodingDefect, ResourceLimitError
from neutronlab.eigensolve import build_H
from neutronlab.geometry import MeshSpec, fission_node_mask

from oracles import dense_h_matrix


def padded_interp_target(l, L):
    m = 2 ** (L + 1)
    t = np.zeros((m, m))
    blk = interp_multi(1, l, l + 1).matrix
    t[: blk.shape[0], : blk.shape[1]] = blk
    return t


def pq_encoding(l, L):
    return bq.combine_PQ(
        bq.oracle_P_interp(l, L), bq.oracle_Q_interp(l, L), padded_interp_target(l, L)
    )


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def test_oracle_P_amplitudes():
    m = 4
    P = bq.oracle_P_interp(1, 1)
    assert bq.unitarity_defect(P) <= 1e-12
    _, idx = bq._pq_space(m)
    col = P[:, idx(0, 0, 0, 0, 0)]
    # column k=0: sqrt(1/4), sqrt(1/2), sqrt(1/4) on data rows 0,1,2
    assert col[idx(0, 0, 0, 0, 0)] == pytest.approx(0.5)
    assert col[idx(1, 0, 0, 0, 0)] == pytest.approx(math.sqrt(0.5))
    assert col[idx(2, 0, 0, 0, 0)] == pytest.approx(0.5)
    assert np.linalg.norm(col) == pytest.approx(1.0)


def test_oracle_P_flag_branch():
    m = 4
    P = bq.oracle_P_interp(1, 1)
    _, idx = bq._pq_space(m)
    for k in (1, 2, 3):  # coarse node count is 1, so these are out of range
        col = P[:, idx(0, k, 0, 0, 0)]
        assert col[idx(0, k, 0, 0, 1)] == pytest.approx(1.0)
        data = [idx(j, k, 0, 0, 0) for j in range(m)]
        assert np.abs(col[data]).max() == 0.0


def test_oracle_Q_rows():
    m = 8
    Q = bq.oracle_Q_interp(2, 2)
    assert bq.unitarity_defect(Q) <= 1e-12
    _, idx = bq._pq_space(m)
    # odd row j=1 maps deterministically to column 0
    col = Q[:, idx(1, 0, 0, 0, 0)]
    assert col[idx(1, 0, 0, 0, 0)] == pytest.approx(1.0)
    # boundary row j=0 splits between data and slack with sqrt(1/2)
    col0 = Q[:, idx(0, 0, 0, 0, 0)]
    assert col0[idx(0, 0, 0, 0, 0)] == pytest.approx(math.sqrt(0.5))
    assert col0[idx(0, 0, 0, 1, 0)] == pytest.approx(math.sqrt(0.5))
    # last fine row carries the 1/2 slack too
    j_last = 2**3 - 2
    col_last = Q[:, idx(j_last, 0, 0, 0, 0)]
    assert col_last[idx(j_last, 2**2 - 2, 0, 0, 0)] == pytest.approx(math.sqrt(0.5))
    assert col_last[idx(j_last, 0, 0, 1, 0)] == pytest.approx(math.sqrt(0.5))


def test_oracle_size_guard():
    with pytest.raises(ResourceLimitError):
        bq.oracle_P_interp(1, 6)


# ---------------------------------------------------------------------------
# combine_PQ
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("l", [1, 2])
def test_combine_pq_encodes_interp(l):
    be = pq_encoding(l, l)
    assert be.alpha == pytest.approx(math.sqrt(2.0), abs=0)
    assert be.block_defect() <= 1e-10
    assert be.unitarity_defect() <= 1e-10
    extracted = be.extracted()
    assert np.abs(extracted - be.target).max() <= 1e-12


def test_combine_pq_alpha_from_target():
    # alpha is computed from the target's actual row/column absolute sums
    be = pq_encoding(1, 1)
    t = be.target
    assert be.alpha == pytest.approx(
        math.sqrt(np.abs(t).sum(axis=1).max() * np.abs(t).sum(axis=0).max())
    )


def test_combine_pq_defect_raises():
    P = bq.oracle_P_interp(1, 1)
    Q = bq.oracle_Q_interp(1, 1)
    wrong = padded_interp_target(1, 1)
    wrong[0, 0] += 0.5
    with pytest.raises(EncodingDefect) as info:
        bq.combine_PQ(P, Q, wrong, tol=1e-10)
    assert info.value.defect > 1e-10


# ---------------------------------------------------------------------------
# permutation fixups
# ---------------------------------------------------------------------------

def test_perm_identity_when_no_padding():
    p_r, p_c = bq.perm_embed_fixup([((3, 2), (3, 2)), ((4, 5), (4, 5))])
    assert np.array_equal(p_r, np.eye(12))
    assert np.array_equal(p_c, np.eye(10))


def test_perm_forward_example():
    # first branch: k=3, n_b=2, N_b=3 -> t=1, t'=1 -> t*N_b + t' = 4
    assert bq.perm_col_index(3, 2, 2, 3) == 4


def test_perm_round_trip():
    for (n_a, n_b, big_b) in ((2, 2, 3), (3, 2, 4), (1, 3, 5)):
        total = 4 * big_b
        for k in range(total):
            fwd = bq.perm_col_index(k, n_a, n_b, big_b)
            assert bq.perm_col_index_inv(fwd, n_a, n_b, big_b) == k


def test_perm_embed_two_factors():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3, 2))
    b = rng.standard_normal((2, 3))
    ap = np.zeros((4, 4))
    ap[:3, :2] = a
    bp = np.zeros((4, 4))
    bp[:2, :3] = b
    p_r, p_c = bq.perm_embed_fixup([((4, 4), (3, 2)), ((4, 4), (2, 3))])
    lhs = np.zeros((16, 16))
    lhs[:6, :6] = np.kron(a, b)
    assert np.array_equal(p_r @ np.kron(ap, bp) @ p_c, lhs)
    assert set(np.unique(p_r)) <= {0.0, 1.0}
    assert set(np.unique(p_c)) <= {0.0, 1.0}


def test_perm_embed_three_factors():
    rng = np.random.default_rng(4)
    mats, pads, dims = [], [], []
    for (mm, nn, bm, bn) in ((3, 2, 4, 4), (2, 3, 4, 4), (2, 1, 2, 2)):
        x = rng.standard_normal((mm, nn))
        xp = np.zeros((bm, bn))
        xp[:mm, :nn] = x
        mats.append(x)
        pads.append(xp)
        dims.append(((bm, bn), (mm, nn)))
    p_r, p_c = bq.perm_embed_fixup(dims)
    kron_all = np.kron(np.kron(mats[0], mats[1]), mats[2])
    pad_all = np.kron(np.kron(pads[0], pads[1]), pads[2])
    lhs = np.zeros_like(pad_all)
    lhs[: kron_all.shape[0], : kron_all.shape[1]] = kron_all
    assert np.array_equal(p_r @ pad_all @ p_c, lhs)


# ---------------------------------------------------------------------------
# level shifts
# ---------------------------------------------------------------------------

def test_embed_level_shift_position():
    be = pq_encoding(1, 2)
    shifted = bq.embed_level_shift(be, 1, 1, 2)
    assert shifted.alpha == be.alpha
    assert shifted.block_defect() <= 1e-10
    out = shifted.extracted()
    # block occupies rows 1..3 (offset n_1 = 1), column 0
    expected = np.zeros((4, 4))
    expected[1:4, 0] = [0.5, 1.0, 0.5]
    assert np.abs(out - expected).max() <= 1e-12


def test_double_shift_composes():
    d, L = 1, 3
    s = max(1, (n_cumulative(d, L) - 1).bit_length())
    parts = []
    for l in (1, 2):
        blk = interp_multi(1, l, l + 1).matrix
        alpha = math.sqrt(2.0)
        base = bq.dilation_encoding(blk, alpha, system_qubits=s)
        parts.append(bq.embed_level_shift(base, l, d, L))
    prod = bq.multiply_encodings(parts[1], parts[0])
    direct = bq.embedded_interp(d, 1, 3, L)
    assert np.abs(prod.extracted() - direct).max() <= 1e-10
    assert prod.alpha == pytest.approx(2.0)


def test_level_shift_dimension_check():
    be = pq_encoding(1, 1)  # system dim 4 < N_3 = 11
    with pytest.raises(ValueError):
        bq.embed_level_shift(be, 1, 1, 3)


# ---------------------------------------------------------------------------
# LCU of the preconditioner embedding
# ---------------------------------------------------------------------------

def test_state_prep_pair_all_ones():
    for terms in (1, 2, 3, 5):
        pair = bq.uniform_state_prep_pair(terms)
        assert pair.beta == terms
        assert pair.coefficient_defect(np.ones(terms)) <= 1e-12
        assert bq.unitarity_defect(pair.left) <= 1e-12


@pytest.mark.parametrize(
    "d,L", [(1, 1), (1, 2), (1, 3), (2, 1)]
)
def test_lcu_fhat(d, L):
    be = bq.lcu_assemble_Fhat(d, L)
    assert be.alpha == pytest.approx(L * 2.0 ** (d * L / 2.0), rel=1e-15)
    assert be.block_defect() <= 1e-8
    assert be.unitarity_defect() <= 1e-10
    fhat = bpx_build(d, L).fhat
    assert np.abs(be.extracted() - fhat).max() <= 1e-8


def test_lcu_alpha_additivity():
    # measured alpha equals the sum of the L subnormalized factors
    be = bq.lcu_assemble_Fhat(1, 3)
    assert be.alpha == pytest.approx(3 * 2.0 ** (3 / 2.0))


def test_lcu_guard():
    with pytest.raises(ResourceLimitError):
        bq.lcu_assemble_Fhat(2, 5)


# ---------------------------------------------------------------------------
# sparse loading and projectors
# ---------------------------------------------------------------------------

def test_load_identity():
    be = bq.load_sparse_encoding(SparseSymMatrix.from_dense(np.eye(4)), 1.0, sparsity=1)
    assert np.abs(be.extracted() - np.eye(4)).max() <= 1e-12
    assert be.alpha == pytest.approx(1.0)


def test_load_A_over_h(homogeneous_1d):
    spec = MeshSpec(1, 2)
    _, A, _ = assemble_LAC(spec, homogeneous_1d)
    h = float(spec.h)
    scaled = A.scaled(1.0 / h)
    norm = float(np.linalg.norm(scaled.to_dense(), 2)) * 1.0001
    be = bq.load_sparse_encoding(scaled, norm, sparsity=3)
    assert be.alpha == pytest.approx(3.0)
    assert np.abs(be.extracted() * norm - scaled.to_dense()).max() <= 1e-10
    assert be.unitarity_defect() <= 1e-10


def test_load_rejects_small_norm(homogeneous_1d):
    _, A, _ = assemble_LAC(MeshSpec(1, 2), homogeneous_1d)
    with pytest.raises(ValueError):
        bq.load_sparse_encoding(A, norm=1e-6)


def test_projector_matches_fission_indicator(half_fission_2d):
    spec = MeshSpec(2, 2)
    mask = fission_node_mask(half_fission_2d, spec)
    be = bq.projector_encoding(mask)
    assert be.alpha == 1.0
    assert be.ancilla_qubits == 1
    assert be.block_defect() == 0.0
    d = be.system_dim
    diag = np.diag(be.block())[: mask.size]
    assert np.array_equal(diag, mask.astype(float))


# ---------------------------------------------------------------------------
# the four-factor chain
# ---------------------------------------------------------------------------

def test_chain_scalar(homogeneous_3d):
    L, A, C = assemble_LAC(MeshSpec(3, 1), homogeneous_3d)
    h_emu, report = bq.hamiltonian_chain_emulate(L, A, C, bpx_build(3, 1))
    assert np.allclose(h_emu, [[1.0 / 37.0]], rtol=1e-12)
    assert len(report) == 4
    assert report[0].name == report[3].name


@pytest.mark.parametrize("dim,lev", [(1, 2), (1, 3), (2, 2)])
def test_chain_matches_build_h_homogeneous(dim, lev, homogeneous_1d, homogeneous_2d):
    rm = homogeneous_1d if dim == 1 else homogeneous_2d
    spec = MeshSpec(dim, lev)
    L, A, C = assemble_LAC(spec, rm)
    h_emu, _ = bq.hamiltonian_chain_emulate(L, A, C, bpx_build(dim, lev))
    h_act = build_H(L, A, C)
    assert np.abs(h_emu - dense_h_matrix(h_act)).max() <= 1e-8


def test_chain_matches_build_h_checkerboard(checkerboard_2x2):
    spec = MeshSpec(2, 2)
    L, A, C = assemble_LAC(spec, checkerboard_2x2)
    h_emu, report = bq.hamiltonian_chain_emulate(L, A, C, bpx_build(2, 2))
    h_act = build_H(L, A, C)
    assert np.abs(h_emu - dense_h_matrix(h_act)).max() <= 1e-7
    for entry in report:
        assert entry.defect <= 1e-8


def test_chain_with_fission_free_block(half_fission_2d):
    spec = MeshSpec(2, 2)
    L, A, C = assemble_LAC(spec, half_fission_2d)
    h_emu, _ = bq.hamiltonian_chain_emulate(L, A, C, bpx_build(2, 2))
    h_act = build_H(L, A, C)
    assert np.abs(h_emu - dense_h_matrix(h_act)).max() <= 1e-8


def test_verification_report_format():
    be = pq_encoding(1, 1)
    text = bq.verification_report([("interp", be)])
    assert "interp:" in text and "alpha=" in text and "defect=" in text


def test_multiply_encodings_alpha_and_block():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 3))
    ea = bq.dilation_encoding(a, 4.0)
    eb = bq.dilation_encoding(b, 4.0)
    prod = bq.multiply_encodings(ea, eb)
    assert prod.alpha == pytest.approx(16.0)
    assert np.abs(prod.extracted() - a @ b).max() <= 1e-10
    assert prod.ancilla_qubits == 2


def test_epsilon_claim_bounds_measured_defect():
    bes = [
        pq_encoding(1, 1),
        bq.lcu_assemble_Fhat(1, 2),
        bq.dilation_encoding(np.array([[0.3, 0.1], [0.0, 0.2]]), 1.0),
    ]
    for be in bes:
        assert be.block_defect() <= be.epsilon_claim
        assert be.unitarity_defect() <= 1e-10

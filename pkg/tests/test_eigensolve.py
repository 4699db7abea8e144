import math
import warnings

import numpy as np
import pytest

from neutronlab.assembly import assemble_LAC
from neutronlab.eigensolve import (
    build_H,
    coarse_seed,
    fission_weight,
    generalized_leading,
    leading_eig,
    qpe_emulate,
)
from neutronlab.errors import ConvergenceFailure
from neutronlab.geometry import MeshSpec, build_checkerboard

from oracles import dense_h_matrix

LAM_STAR_2D = 2 * math.pi**2 + 1


def test_build_h_scalar(homogeneous_3d):
    L, A, C = assemble_LAC(MeshSpec(3, 1), homogeneous_3d)
    h = build_H(L, A, C)
    assert np.allclose(h.apply(np.array([1.0])), [1.0 / 37.0], rtol=1e-13)


def test_build_h_zero_fission():
    rm = build_checkerboard(1, 1.0, 1.0, 1.0, 0.0, dim=2)
    L, A, C = assemble_LAC(MeshSpec(2, 2), rm)
    h = build_H(L, A, C)
    assert np.all(h.apply(np.ones(L.n)) == 0.0)


def test_build_h_symmetry_heterogeneous(checkerboard_2x2):
    spec = MeshSpec(2, 3)
    L, A, C = assemble_LAC(spec, checkerboard_2x2)
    h = build_H(L, A, C, spec=spec, map=checkerboard_2x2)
    assert h.symmetry_defect() <= 1e-10


def test_kron_sqrt_matches_dense_block(homogeneous_2d):
    spec = MeshSpec(2, 3)
    L, A, C = assemble_LAC(spec, homogeneous_2d)
    fast = build_H(L, A, C, spec=spec, map=homogeneous_2d)
    slow = build_H(L, A, C)  # dense square-root path
    x = np.random.default_rng(1).standard_normal(L.n)
    assert np.abs(fast.c_sqrt.apply(x) - slow.c_sqrt.apply(x)).max() <= 1e-12


def test_leading_eig_scalar(homogeneous_3d):
    L, A, C = assemble_LAC(MeshSpec(3, 1), homogeneous_3d)
    pair = leading_eig(build_H(L, A, C), np.array([1.0]), 1e-12)
    assert pair.k_h == pytest.approx(1.0 / 37.0, rel=1e-12)
    assert pair.lambda_h == pytest.approx(37.0, rel=1e-12)
    assert abs(pair.k_h * pair.lambda_h - 1.0) <= 1e-15


def test_leading_eig_scale_invariance(homogeneous_2d):
    spec = MeshSpec(2, 3)
    L, A, C = assemble_LAC(spec, homogeneous_2d)
    h = build_H(L, A, C, spec=spec, map=homogeneous_2d)
    tol = 1e-10
    v0 = np.ones(L.n)
    a = leading_eig(h, v0, tol)
    b = leading_eig(h, 1000.0 * v0, tol)
    assert abs(a.k_h - b.k_h) <= 10 * tol * a.k_h


def test_leading_eig_residual_invariant(checkerboard_2x2):
    spec = MeshSpec(2, 3)
    L, A, C = assemble_LAC(spec, checkerboard_2x2)
    h = build_H(L, A, C, spec=spec, map=checkerboard_2x2)
    tol = 1e-9
    pair = leading_eig(h, np.ones(L.n), tol)
    assert pair.residual <= tol
    assert abs(np.linalg.norm(pair.u) - 1.0) <= 1e-12


def test_leading_eig_zero_operator():
    rm = build_checkerboard(1, 1.0, 1.0, 1.0, 0.0, dim=2)
    L, A, C = assemble_LAC(MeshSpec(2, 2), rm)
    with pytest.raises(ConvergenceFailure):
        leading_eig(build_H(L, A, C), np.ones(L.n), 1e-10)


def test_lambda_ladder_monotone_toward_limit(homogeneous_2d):
    lams = []
    for lev in range(1, 6):
        spec = MeshSpec(2, lev)
        L, A, C = assemble_LAC(spec, homogeneous_2d)
        lams.append(generalized_leading(L, A, C, tol=1e-11, spec=spec).lambda_h)
    assert all(b < a for a, b in zip(lams, lams[1:]))
    # Aitken extrapolation from the three finest levels
    d1, d2 = lams[-2] - lams[-3], lams[-1] - lams[-2]
    extrap = lams[-1] - d2 * d2 / (d1 - d2)
    assert abs(extrap - LAM_STAR_2D) <= 0.005 * LAM_STAR_2D


def test_h_pair_matches_generalized_dense(checkerboard_2x2):
    spec = MeshSpec(2, 4)
    L, A, C = assemble_LAC(spec, checkerboard_2x2)
    h = build_H(L, A, C, spec=spec, map=checkerboard_2x2)
    hd = dense_h_matrix(h)
    w, vecs = np.linalg.eigh(0.5 * (hd + hd.T))
    k_dense, v_dense = w[-1], vecs[:, -1]

    pair = generalized_leading(L, A, C, tol=1e-12, spec=spec)
    assert abs(pair.k_h - k_dense) <= 1e-9

    v_from_u = h.c_sqrt.apply(pair.u)
    v_from_u /= np.linalg.norm(v_from_u)
    if v_from_u @ v_dense < 0:
        v_dense = -v_dense
    nz = h.c_sqrt.mask
    assert np.abs(v_from_u[nz] - v_dense[nz]).max() <= 1e-6


def test_generalized_power_fallback(homogeneous_2d):
    spec = MeshSpec(2, 3)
    L, A, C = assemble_LAC(spec, homogeneous_2d)
    a = generalized_leading(L, A, C, tol=1e-11, spec=spec, method="lanczos")
    b = generalized_leading(L, A, C, tol=1e-11, spec=spec, method="power")
    assert abs(a.lambda_h - b.lambda_h) <= 1e-8 * a.lambda_h


def test_coarse_seed_overlap(homogeneous_2d):
    seed = coarse_seed(homogeneous_2d, 2, 5)
    assert abs(np.linalg.norm(seed) - 1.0) <= 1e-12
    spec = MeshSpec(2, 5)
    L, A, C = assemble_LAC(spec, homogeneous_2d)
    h = build_H(L, A, C, spec=spec, map=homogeneous_2d)
    pair = leading_eig(h, np.ones(L.n), 1e-11)
    v = h.c_sqrt.apply(pair.u)
    v /= np.linalg.norm(v)
    assert abs(seed @ v) >= 0.9


def test_coarse_seed_level_validation(homogeneous_2d):
    with pytest.raises(ValueError):
        coarse_seed(homogeneous_2d, 3, 2)
    with pytest.raises(ValueError):
        coarse_seed(homogeneous_2d, 3, 3)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        seed = coarse_seed(homogeneous_2d, 3, 3, allow_equal_levels=True)
    assert caught and "degenerate" in str(caught[0].message)
    assert abs(np.linalg.norm(seed) - 1.0) <= 1e-12


def test_coarse_seed_straddle_rejected():
    rm = build_checkerboard(4, 1.0, 40.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        coarse_seed(rm, 1, 4)


def test_qpe_scalar(homogeneous_3d):
    L, A, C = assemble_LAC(MeshSpec(3, 1), homogeneous_3d)
    h = build_H(L, A, C)
    res = qpe_emulate(h, np.array([1.0]), 1e-3)
    assert res.k_estimate == pytest.approx(0.027, abs=1e-12)
    assert res.success_prob == pytest.approx(1.0, abs=1e-12)
    assert res.reliable


def test_qpe_orthogonal_seed(homogeneous_2d):
    spec = MeshSpec(2, 3)
    L, A, C = assemble_LAC(spec, homogeneous_2d)
    h = build_H(L, A, C, spec=spec, map=homogeneous_2d)
    pair = leading_eig(h, np.ones(L.n), 1e-11)
    v = h.c_sqrt.apply(pair.u)
    v /= np.linalg.norm(v)
    seed = np.zeros(L.n)
    seed[0] = 1.0
    seed -= (seed @ v) * v
    res = qpe_emulate(h, seed, 1e-4)
    assert res.success_prob <= 1e-12
    assert not res.reliable


def test_qpe_error_bound(homogeneous_2d):
    spec = MeshSpec(2, 3)
    L, A, C = assemble_LAC(spec, homogeneous_2d)
    h = build_H(L, A, C, spec=spec, map=homogeneous_2d)
    eps = 1e-4
    seed = coarse_seed(homogeneous_2d, 2, 3)
    res = qpe_emulate(h, seed, eps)
    k_exact = generalized_leading(L, A, C, tol=1e-13, spec=spec).k_h
    assert abs(res.k_estimate - k_exact) <= eps / 2 + eps / 10


def test_fission_weight_extremes(homogeneous_2d):
    spec = MeshSpec(2, 3)
    u = np.random.default_rng(0).standard_normal(spec.n_nodes)
    u /= np.linalg.norm(u)
    assert fission_weight(u, homogeneous_2d, spec) == pytest.approx(1.0, rel=1e-14)
    rm0 = build_checkerboard(1, 1.0, 1.0, 1.0, 0.0, dim=2)
    assert fission_weight(u, rm0, spec) == 0.0


def test_fission_weight_half_domain(half_fission_2d):
    weights = []
    for lev in (3, 4, 5):
        spec = MeshSpec(2, lev)
        L, A, C = assemble_LAC(spec, half_fission_2d)
        pair = generalized_leading(L, A, C, tol=1e-11, spec=spec)
        weights.append(fission_weight(pair.u, half_fission_2d, spec))
    assert min(weights) >= 0.9 * weights[0]


def test_h_annihilates_zero_block(half_fission_2d):
    from neutronlab.geometry import fission_node_mask

    spec = MeshSpec(2, 3)
    L, A, C = assemble_LAC(spec, half_fission_2d)
    h = build_H(L, A, C)
    mask = fission_node_mask(half_fission_2d, spec)
    x = np.zeros(L.n)
    x[~mask] = np.random.default_rng(3).standard_normal((~mask).sum())
    assert np.abs(h.apply(x)).max() == 0.0
    # and the image stays inside the fission block
    y = h.apply(np.random.default_rng(4).standard_normal(L.n))
    assert np.abs(y[~mask]).max() == 0.0

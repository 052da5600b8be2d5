import numpy as np
import pytest

from compose_verify import simmap
from compose_verify.embstore import normalize_rows
from compose_verify.errors import BadPatchSize, DimMismatch


def test_identity_pattern_for_orthonormal_rows():
    q = np.eye(4)
    m = simmap.build_sim_map(q, q)
    assert np.allclose(m, np.eye(4), atol=1e-12)


def test_entries_within_cauchy_schwarz_bound():
    rng = np.random.default_rng(0)
    q = normalize_rows(rng.normal(size=(7, 16)))
    c = normalize_rows(rng.normal(size=(9, 16)))
    m = simmap.build_sim_map(q, c)
    assert np.all(m <= 1.0 + 1e-6)
    assert np.all(m >= -1.0 - 1e-6)


def test_column_permutation_equivariance():
    rng = np.random.default_rng(1)
    q = normalize_rows(rng.normal(size=(5, 8)))
    perm = np.array([3, 0, 4, 1, 2])
    m = simmap.build_sim_map(q, q)
    m_perm = simmap.build_sim_map(q, q[perm])
    assert np.allclose(m_perm, m[:, perm], atol=1e-12)


def test_transpose_symmetry():
    rng = np.random.default_rng(2)
    q = normalize_rows(rng.normal(size=(6, 8)))
    c = normalize_rows(rng.normal(size=(4, 8)))
    assert np.max(np.abs(simmap.build_sim_map(q, c).T - simmap.build_sim_map(c, q))) < 1e-7


def test_dim_mismatch():
    with pytest.raises(DimMismatch):
        simmap.build_sim_map(np.ones((2, 3)), np.ones((2, 4)))


def test_phi_endpoints_and_midpoint():
    m = np.array([[-1.0, 1.0, 0.0]])
    assert np.allclose(simmap.phi(m), [[0.0, 1.0, 0.5]], atol=1e-12)


def test_phi_clips_out_of_range():
    m = np.array([[-1.0 - 5e-7, 1.0 + 5e-7]])
    out = simmap.phi(m)
    assert out[0, 0] == 0.0
    assert out[0, 1] == 1.0


def test_phi_monotone():
    xs = np.linspace(-1, 1, 101).reshape(1, -1)
    out = simmap.phi(xs)[0]
    assert np.all(np.diff(out) > 0)


def test_psi_64_into_8_patches():
    m01 = np.random.default_rng(3).uniform(size=(64, 64))
    grid = simmap.psi(m01, 64, 8)
    assert grid.patches.shape == (64, 64)


def test_psi_padding_rule():
    m01 = np.full((3, 3), 0.7)
    grid = simmap.psi(m01, 8, 4)
    assert grid.patches.shape == (4, 16)
    # first patch holds the 3x3 corner; everything else is padding zeros
    first = grid.patches[0].reshape(4, 4)
    assert np.allclose(first[:3, :3], 0.7)
    assert first[3, 3] == 0.0
    assert np.all(grid.patches[1:] == 0.0)


def test_psi_truncation_keeps_leading():
    m01 = np.arange(70 * 70, dtype=np.float64).reshape(70, 70) / (70 * 70)
    grid = simmap.psi(m01, 64, 8)
    rebuilt = (
        grid.patches.reshape(8, 8, 8, 8).transpose(0, 2, 1, 3).reshape(64, 64)
    )
    assert np.array_equal(rebuilt, m01[:64, :64])


def test_psi_bad_patch_size():
    with pytest.raises(BadPatchSize):
        simmap.psi(np.zeros((4, 4)), 8, 3)


def test_psi_patch_order_row_major():
    side, patch = 4, 2
    m01 = np.arange(16, dtype=np.float64).reshape(4, 4)
    grid = simmap.psi(m01, side, patch)
    # patch 1 is the top-right block, flattened row-major
    assert np.array_equal(grid.patches[1], [2, 3, 6, 7])
    # patch 2 is the bottom-left block
    assert np.array_equal(grid.patches[2], [8, 9, 12, 13])

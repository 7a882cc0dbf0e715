import numpy as np
import pytest
from hypothesis import given, strategies as st

from scmunmix.core import HsiCube, ScmError
from scmunmix.graphs import (
    build_endmember_laplacian,
    build_graphs,
    build_spatial_laplacian,
    build_wavelength_laplacian,
    grid_edges,
)


def cube(h, w, data):
    data = np.asarray(data, dtype=float)
    return HsiCube(h, w, data.shape[1], data)


def check_laplacian(L):
    L = L.toarray() if hasattr(L, "toarray") else np.asarray(L)
    assert np.allclose(L, L.T, atol=0)
    assert np.abs(L.sum(axis=1)).max() <= 1e-10
    assert np.all(np.diag(L) >= 0)
    off = L - np.diag(np.diag(L))
    assert np.all(off <= 0)
    if L.shape[0] <= 50:
        assert np.linalg.eigvalsh(L)[0] >= -1e-10


def test_identical_pixels_weight_one():
    L = build_spatial_laplacian(cube(1, 2, [[0.3, 0.4], [0.3, 0.4]]), 0.05).toarray()
    assert np.array_equal(L, [[1, -1], [-1, 1]])


def test_weight_hand_evaluated():
    L = build_spatial_laplacian(cube(1, 2, [[0.0], [0.1]]), 0.05).toarray()
    # 0.01 / (2 * 1 * 0.0025) = 2
    assert L[0, 1] == pytest.approx(-np.exp(-2.0), rel=1e-14)
    assert L[0, 0] == pytest.approx(np.exp(-2.0), rel=1e-14)


def test_segmentation_cuts_cross_region_edges():
    L = build_spatial_laplacian(cube(1, 2, [[0.0], [0.0]]), 0.05, segmentation=[0, 1])
    assert np.array_equal(L.toarray(), np.zeros((2, 2)))


def test_segmentation_same_label_weight_one():
    L = build_spatial_laplacian(cube(1, 2, [[0.0], [5.0]]), 0.05, segmentation=[3, 3])
    assert np.array_equal(L.toarray(), [[1, -1], [-1, 1]])


def test_spatial_errors():
    with pytest.raises(ScmError, match="at least 2 pixels"):
        build_spatial_laplacian(cube(1, 1, [[0.0]]), 0.05)
    with pytest.raises(ScmError):
        build_spatial_laplacian(cube(1, 2, [[0.0], [1.0]]), 0.0)
    with pytest.raises(ScmError):
        build_spatial_laplacian(cube(1, 2, [[0.0], [1.0]]), 0.05, segmentation=[0, 1, 2])


def test_tiny_weights_kept():
    # weight exp(-0.48^2 / 0.005) ~ 1e-20
    L = build_spatial_laplacian(cube(1, 2, [[0.0], [0.48]]), 0.05)
    assert 0 < -L[0, 1] < 1e-12
    assert L.nnz == 4
    assert np.abs(L.toarray().sum(axis=1)).max() == 0.0


def test_endmember_laplacian_examples():
    assert np.array_equal(build_endmember_laplacian(2), [[1, -1], [-1, 1]])
    H = build_endmember_laplacian(3)
    assert np.array_equal(np.diag(H), [2, 2, 2])
    assert np.all(H[~np.eye(3, dtype=bool)] == -1)
    for m in range(2, 9):
        assert np.array_equal(build_endmember_laplacian(m) @ np.ones(m), np.zeros(m))
    with pytest.raises(ScmError):
        build_endmember_laplacian(1)


def test_wavelength_laplacian_examples():
    assert np.array_equal(build_wavelength_laplacian(3).toarray(),
                          [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    assert np.array_equal(build_wavelength_laplacian(2).toarray(), [[1, -1], [-1, 1]])
    with pytest.raises(ScmError):
        build_wavelength_laplacian(1)


@given(st.integers(2, 40), st.integers(0, 2**32 - 1))
def test_wavelength_quadratic_form_is_difference_sum(b, seed):
    x = np.random.default_rng(seed).normal(size=b)
    G = build_wavelength_laplacian(b)
    direct = sum((x[k + 1] - x[k]) ** 2 for k in range(b - 1))
    assert x @ (G @ x) == pytest.approx(direct, rel=1e-12, abs=1e-14)


@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([4, 8]), st.integers(0, 2**32 - 1))
def test_laplacian_invariants(h, w, nb, seed):
    if h * w < 2:
        return
    rng = np.random.default_rng(seed)
    c = cube(h, w, rng.uniform(0, 0.2, size=(h * w, 3)))
    check_laplacian(build_spatial_laplacian(c, 0.05, nb))
    check_laplacian(build_endmember_laplacian(2 + seed % 6))
    check_laplacian(build_wavelength_laplacian(2 + seed % 30))


@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_trace_form_equals_weighted_pair_sum(h, w, seed):
    rng = np.random.default_rng(seed)
    c = cube(h, w, rng.uniform(0, 0.2, size=(h * w, 4)))
    L = build_spatial_laplacian(c, 0.05).toarray()
    A = rng.dirichlet(np.ones(3), size=h * w)
    W = -L + np.diag(np.diag(L))
    pair = 0.5 * sum(W[i, k] * np.sum((A[i] - A[k]) ** 2)
                     for i in range(h * w) for k in range(h * w))
    assert np.trace(A.T @ L @ A) == pytest.approx(pair, rel=1e-12)


def test_grid_edges_counts_and_order():
    e4 = grid_edges(3, 4, 4)
    assert len(e4) == 3 * 3 + 2 * 4
    e8 = grid_edges(3, 4, 8)
    assert len(e8) == len(e4) + 2 * 2 * 3
    for e in (e4, e8):
        assert np.all(e[:, 0] < e[:, 1])
        assert np.array_equal(e, e[np.lexsort((e[:, 1], e[:, 0]))])
    with pytest.raises(ScmError):
        grid_edges(2, 2, 6)


def test_build_graphs_single_band():
    g = build_graphs(cube(2, 2, np.zeros((4, 1))), 3, 0.05)
    assert g.wavelength.shape == (1, 1) and g.wavelength.nnz == 0
    assert g.endmember.shape == (3, 3)

import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from hatenet.adjustment import (
    ArmSizeError,
    ConvergenceError,
    DegenerateSpectrumWarning,
    RankDeficiencyWarning,
    SmallStratumWarning,
    spectral_covariates,
    structural_covariates,
    top_k_spectrum,
    whiten,
    whitening_error,
    within_arm_ols,
)
from hatenet.generators import marketplace_graph, partial_interference_graph
from hatenet.graph import DirectedGraph


def _dense_top(g, k):
    E = g.to_dense()
    return np.sort(np.linalg.eigvalsh(E @ E.T))[::-1][: k + 1]


@given(st.integers(3, 30), st.floats(0.05, 0.6), st.integers(0, 2**32 - 1), st.data())
def test_spectrum_matches_dense(n, p, seed, data):
    rng = np.random.default_rng(seed)
    adj = (rng.random((n, n)) < p) * (1 - np.eye(n))
    if adj.sum() == 0:
        adj[0, 1] = 1
    g = DirectedGraph.from_adjacency(adj)
    k = data.draw(st.integers(1, n - 1))
    b = top_k_spectrum(g, k, rng=rng)
    ref = _dense_top(g, k)
    scale = ref[0]
    assert np.all(np.abs(b.eigenvalues - ref[:k]) <= 1e-8 * scale)
    assert abs(b.next_eigenvalue_bound - ref[k]) <= 1e-8 * scale
    assert whitening_error(b.W) <= 1e-8


def test_block_graph_spectrum():
    g = partial_interference_graph(3, 2)
    b = top_k_spectrum(g, 2)
    assert b.eigenvalues == pytest.approx([4.0, 4.0], abs=1e-10)
    assert b.next_eigenvalue_bound == pytest.approx(1.0, abs=1e-10)
    groups = np.repeat(np.eye(2), 3, axis=0)
    # eigenvector span equals the span of the group indicators
    proj = b.eigenvectors @ np.linalg.pinv(b.eigenvectors)
    assert np.allclose(proj @ groups, groups, atol=1e-9)
    # the intercept lies in that span, so the whitened basis has rank 2
    assert b.rank == 2


def test_marketplace_next_eigenvalue():
    b = top_k_spectrum(marketplace_graph(4, 4), 7)
    assert b.next_eigenvalue_bound == pytest.approx(4.0, abs=1e-9)
    assert b.eigenvalues[0] == pytest.approx(36.0, abs=1e-9)


def test_edgeless_is_flagged():
    g = DirectedGraph.from_adjacency(sp.csr_matrix((5, 5)))
    with pytest.warns(DegenerateSpectrumWarning):
        b = top_k_spectrum(g, 1)
    assert b.eigenvalues[0] == 0.0 and b.degenerate
    assert whitening_error(b.W) <= 1e-8


def test_k_bounds_and_convergence_error():
    g = partial_interference_graph(3, 2)
    with pytest.raises(ValueError):
        top_k_spectrum(g, 6)
    big = DirectedGraph.from_adjacency((np.random.default_rng(0).random((60, 60)) < 0.2) * (1 - np.eye(60)))
    with pytest.raises(ConvergenceError) as err:
        top_k_spectrum(big, 3, max_iter=1)
    assert err.value.residuals.shape == (4,)


def test_spectral_covariates_modes():
    g = partial_interference_graph(3, 2)
    assert spectral_covariates(g, -1) is None
    assert np.array_equal(spectral_covariates(g, 0), np.ones((6, 1)))


@given(st.integers(0, 2**32 - 1))
def test_whiten_preserves_span(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 4)) @ np.diag([1, 10, 0.1, 100])
    W = whiten(X)
    assert whitening_error(W) <= 1e-8
    assert np.linalg.matrix_rank(np.column_stack([X, W]), tol=1e-8) == 4


def test_whiten_rank_deficient():
    X = np.column_stack([np.ones(6), np.ones(6), np.arange(6.0)])
    W = whiten(X)
    assert W.shape == (6, 2) and whitening_error(W) <= 1e-8


def _arms(n, rng):
    z = np.zeros(n)
    z[rng.permutation(n)[: n // 2]] = 1.0
    return z


def test_ols_matches_qr_reference(rng):
    n, k = 50, 3
    W = whiten(np.column_stack([np.ones(n), rng.normal(size=(n, k))]))
    y, z = rng.normal(size=n), _arms(n, rng)
    fit = within_arm_ols(y, z, W)
    for arm, beta in ((1, fit.beta1), (0, fit.beta0)):
        m = z == arm
        Q, R = np.linalg.qr(W[m])
        ref = np.linalg.solve(R, Q.T @ y[m])
        assert np.allclose(beta, ref, atol=1e-9)
        assert np.allclose(fit.residuals[m], y[m] - W[m] @ ref, atol=1e-9)
        assert np.max(np.abs(W[m].T @ fit.residuals[m])) <= 1e-8 * n
        assert np.sum(fit.residuals[m] ** 2) <= np.sum(y[m] ** 2) + 1e-12


def test_ols_idempotent(rng):
    n = 40
    W = whiten(np.column_stack([np.ones(n), rng.normal(size=(n, 2))]))
    y, z = rng.normal(size=n), _arms(n, rng)
    e = within_arm_ols(y, z, W).residuals
    assert np.allclose(within_arm_ols(e, z, W).residuals, e, atol=1e-10)


def test_ols_exact_signal(rng):
    n = 20
    W = whiten(np.column_stack([np.ones(n), rng.normal(size=(n, 2))]))
    y = 3.0 * W[:, 1]
    fit = within_arm_ols(y, _arms(n, rng), W)
    assert np.allclose(fit.residuals, 0, atol=1e-12)
    assert np.allclose(fit.beta1, [0, 3, 0], atol=1e-12) and np.allclose(fit.beta0, [0, 3, 0], atol=1e-12)


def test_ols_rank_deficient_and_empty(rng):
    n = 10
    W = np.column_stack([np.ones(n), np.ones(n)])
    with pytest.warns(RankDeficiencyWarning):
        fit = within_arm_ols(rng.normal(size=n), _arms(n, rng), W)
    assert all(fit.rank_deficient)
    with pytest.raises(ArmSizeError):
        within_arm_ols(np.ones(n), np.ones(n), W)


def test_structural_merged_groups():
    W = structural_covariates("merged-groups", np.repeat([0, 1, 2], 3))
    assert W.shape == (9, 3) and whitening_error(W) <= 1e-8
    one = structural_covariates("merged-groups", np.zeros(5, dtype=int))
    assert np.allclose(one, 1.0)


def test_structural_two_way_span():
    r, c = np.arange(16) // 4, np.arange(16) % 4
    W = structural_covariates("two-way", r // 2, c // 2)
    assert W.shape == (16, 3)
    cells = (r // 2) * 2 + c // 2
    D = np.eye(4)[cells]
    additive = np.column_stack([np.ones(16), r // 2, c // 2])
    interaction = D @ np.array([1.0, -1.0, -1.0, 1.0])
    span = lambda M: np.linalg.matrix_rank(M, tol=1e-9)
    assert span(np.column_stack([W, additive])) == 3
    assert span(np.column_stack([W, interaction])) == 4


def test_structural_errors_and_warning():
    with pytest.raises(ValueError, match="no units"):
        structural_covariates("merged-groups", np.array([0, 0, 2, 2]))
    with pytest.warns(SmallStratumWarning):
        structural_covariates("merged-groups", np.array([0] * 40 + [1]))
    with pytest.raises(ValueError):
        structural_covariates("two-way", np.zeros(4, dtype=int))

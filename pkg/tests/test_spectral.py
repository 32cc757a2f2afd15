import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsnet.graph import build_adjacency, normalize_adjacency, path_graph
from rsnet.spectral import (NotSymmetricError, eig_symmetric, implicit_fairing, spectral_filter,
                            spectral_radius)


def random_symmetric(n, seed):
    M = np.random.default_rng(seed).standard_normal((n, n))
    return M + M.T


@pytest.mark.parametrize("n,seed", [(1, 0), (2, 1), (5, 2), (17, 3), (24, 4)])
def test_eig_symmetric_reconstructs(n, seed):
    S = random_symmetric(n, seed)
    eig = eig_symmetric(S)
    np.testing.assert_allclose(eig.reconstruct(), S, atol=1e-11)
    np.testing.assert_allclose(eig.eigenvectors.T @ eig.eigenvectors, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(eig.eigenvalues, np.linalg.eigvalsh(S), atol=1e-11)
    assert np.all(np.diff(eig.eigenvalues) >= 0)


def test_eigenvector_signs_are_canonical():
    eig = eig_symmetric(random_symmetric(6, 9))
    for v in eig.eigenvectors.T:
        first = v[np.abs(v) > 1e-12][0]
        assert first > 0


def test_eig_rejects_asymmetric():
    with pytest.raises(NotSymmetricError):
        eig_symmetric(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_repeated_eigenvalues_orthonormal():
    # complete graph K4: Laplacian eigenvalue 4/3 with multiplicity three
    A = np.ones((4, 4)) - np.eye(4)
    _, L = normalize_adjacency(A)
    eig = eig_symmetric(L)
    np.testing.assert_allclose(eig.eigenvalues, [0, 4 / 3, 4 / 3, 4 / 3], atol=1e-12)
    np.testing.assert_allclose(eig.eigenvectors.T @ eig.eigenvectors, np.eye(4), atol=1e-12)


def test_fairing_p3_closed_form():
    _, L = normalize_adjacency(build_adjacency(path_graph(3)))
    H = spectral_filter(L, np.array([[0.0], [1.0], [0.0]]), implicit_fairing(1.0))
    # (I + L) h = e_1 solved by hand: h = (1/(3 sqrt 2), 2/3, 1/(3 sqrt 2))
    c = 1 / (3 * math.sqrt(2))
    np.testing.assert_allclose(H[:, 0], [c, 2 / 3, c], atol=1e-14)


def test_identity_transfer_function_is_identity():
    _, L = normalize_adjacency(build_adjacency(path_graph(5)))
    X = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_allclose(spectral_filter(L, X, lambda lam: 1.0), X, atol=1e-13)


def test_undefined_transfer_function_raises():
    _, L = normalize_adjacency(build_adjacency(path_graph(3)))
    with pytest.raises(ValueError, match="undefined"):
        spectral_filter(L, np.ones((3, 1)), lambda lam: np.inf if lam > 1.5 else 1.0)
    with pytest.raises(ValueError, match="undefined"):
        spectral_filter(L, np.ones((3, 1)), lambda lam: 1.0 / 0.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 50.0), st.integers(2, 12))
def test_fairing_matches_linear_solve(s, n):
    _, L = normalize_adjacency(build_adjacency(path_graph(n)))
    X = np.arange(2 * n, dtype=float).reshape(n, 2)
    H = spectral_filter(L, X, implicit_fairing(s))
    np.testing.assert_allclose(H, np.linalg.solve(np.eye(n) + s * L, X), rtol=1e-10, atol=1e-10)


def test_spectral_radius_symmetric_and_not():
    A_hat, _ = normalize_adjacency(build_adjacency(path_graph(4)))
    assert spectral_radius(A_hat) == pytest.approx(1.0, abs=1e-12)
    # bipartite: eigenvalues +1 and -1 both present, power iteration on S^2 still converges
    T = np.diag([2.0, -2.0, 0.5]) + np.triu(np.ones((3, 3)), 1) * 0.1
    assert spectral_radius(T) == pytest.approx(2.0, abs=1e-8)
    assert spectral_radius(np.zeros((3, 3))) == 0.0

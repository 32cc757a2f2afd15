"""Small dense symmetric eigensolver, spectral graph filters, spectral radius."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class NotSymmetricError(ValueError):
    pass


class PowerIterationError(RuntimeError):
    def __init__(self, msg, last_iterates):
        super().__init__(msg)
        self.last_iterates = last_iterates


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.T


def _jacobi_sweeps(S: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations. Returns the (nearly) diagonalized matrix and the
    accumulated rotation ``V`` with ``S_in = V diag V^T``."""
    A = S.copy()
    n = len(A)
    V = np.eye(n)
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(A[offmask] ** 2))
        if off < tol:
            return A, V
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J with J the (p, q) rotation
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    off = np.sqrt(np.sum(A[offmask] ** 2))
    if off < tol:
        return A, V
    raise RuntimeError(f"Jacobi eigensolver did not converge (off-diagonal norm {off:.3e})")


def eig_symmetric(S: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues come out ascending. Each eigenvector is sign-fixed so its first
    entry of magnitude above 1e-12 is positive, and eigenvalues equal to within
    1e-12 are ordered by their eigenvectors lexicographically, which makes the
    output deterministic.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    asym = np.max(np.abs(S - S.T), initial=0.0)
    if asym >= 1e-10:
        raise NotSymmetricError(f"matrix is not symmetric (max |S - S^T| = {asym:.3e})")
    scale = max(np.max(np.abs(S), initial=0.0), 1.0)
    D, V = _jacobi_sweeps(0.5 * (S + S.T), tol * scale, max_sweeps)
    lam = np.diag(D).copy()
    for k in range(V.shape[1]):
        nz = np.flatnonzero(np.abs(V[:, k]) > 1e-12)
        if len(nz) and V[nz[0], k] < 0:
            V[:, k] = -V[:, k]
    order = sorted(range(len(lam)), key=lambda k: lam[k])
    # stable tie-break among numerically equal eigenvalues
    i = 0
    while i < len(order):
        j = i + 1
        while j < len(order) and lam[order[j]] - lam[order[i]] <= 1e-12 * scale:
            j += 1
        if j - i > 1:
            order[i:j] = sorted(order[i:j], key=lambda k: tuple(V[:, k]))
        i = j
    return EigenDecomposition(lam[order], V[:, order])


def spectral_filter(L: np.ndarray, X: np.ndarray, h: Callable[[float], float]) -> np.ndarray:
    """Apply ``U diag(h(lambda_i)) U^T X`` for the eigenbasis of ``L``."""
    eig = eig_symmetric(L)
    with np.errstate(divide="raise", invalid="raise"):
        try:
            gains = np.array([h(float(lam)) for lam in eig.eigenvalues], dtype=np.float64)
        except (ZeroDivisionError, FloatingPointError) as exc:
            raise ValueError(f"transfer function undefined on the spectrum: {exc}") from None
    if not np.all(np.isfinite(gains)):
        bad = eig.eigenvalues[~np.isfinite(gains)]
        raise ValueError(f"transfer function undefined at eigenvalue(s) {bad.tolist()}")
    U = eig.eigenvectors
    X = np.asarray(X, dtype=np.float64)
    return U @ (gains[:, None] * (U.T @ X))


def implicit_fairing(s: float) -> Callable[[float], float]:
    """Transfer function ``1 / (1 + s*lambda)``."""
    return lambda lam: 1.0 / (1.0 + s * lam)


def spectral_radius(S: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000,
                    seed: int = 0) -> float:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if np.max(np.abs(S - S.T), initial=0.0) < 1e-10:
        return float(np.max(np.abs(eig_symmetric(S).eigenvalues), initial=0.0))
    # Power iteration on S^2 so that a +/-rho eigenvalue pair still converges.
    x = np.random.default_rng(seed).standard_normal(len(S))
    x /= np.linalg.norm(x)
    prev = None
    for _ in range(max_iter):
        y = S @ (S @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        est = np.sqrt(ny)
        x = y / ny
        if prev is not None and abs(est - prev) <= tol * max(est, 1.0):
            return float(est)
        prev = est
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} iterations", (prev, est)
    )

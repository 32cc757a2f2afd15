"""Implicit-fairing solves through the splitting ``(I + sL) = (1+s)I - s*A_hat``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import eig_symmetric, spectral_radius

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000


class ConvergenceError(RuntimeError):
    def __init__(self, msg: str, trace: "IterationTrace"):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class RegularSplitting:
    s: float
    A_hat: np.ndarray
    B: np.ndarray
    C: np.ndarray
    L_s: np.ndarray

    @property
    def iteration_matrix(self) -> np.ndarray:
        """``B^-1 C``, which equals ``s/(1+s) * A_hat``."""
        return self.C / (1.0 + self.s)

    @property
    def n(self) -> int:
        return len(self.A_hat)


@dataclass
class IterationTrace:
    iterates: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    converged: bool = False
    steps: int = 0
    true_residual: float = float("nan")  # ||L_s H - X||_F of the returned iterate

    def contraction_factors(self) -> np.ndarray:
        r = np.asarray(self.residual_norms)
        with np.errstate(divide="ignore", invalid="ignore"):
            return r[1:] / r[:-1]


def split(A_hat: np.ndarray, s: float) -> RegularSplitting:
    if not s > 0:
        raise ValueError(f"smoothing parameter s must be positive, got {s}")
    A_hat = np.asarray(A_hat, dtype=np.float64)
    n = len(A_hat)
    if np.any(A_hat < 0):
        raise ValueError("normalized adjacency must be entrywise nonnegative")
    B = (1.0 + s) * np.eye(n)
    C = s * A_hat
    return RegularSplitting(float(s), A_hat, B, C, B - C)


def jacobi_step(sp: RegularSplitting, H: np.ndarray, X: np.ndarray) -> np.ndarray:
    s = sp.s
    return (s / (1.0 + s)) * (sp.A_hat @ H) + X / (1.0 + s)


def solve_iterative(sp: RegularSplitting, X: np.ndarray, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER,
                    keep_iterates: bool = True) -> tuple[np.ndarray, IterationTrace]:
    """Fixed-point iteration ``H <- B^-1 C H + B^-1 X`` started from ``H = X``.

    Stops once ``||r_t||_F <= tol * ||X||_F`` for the residual ``r_t = L_s H_t - X``;
    at least one step is always taken. ``residual_norms[0]`` belongs to the
    starting point.

    The residual is carried by its exact recurrence ``r_{t+1} = B^-1 C r_t``
    (``L_s`` and ``B^-1 C`` commute because ``B`` is a multiple of the identity)
    rather than recomputed as ``L_s H - X``. Recomputing hits a rounding floor
    near ``eps * ||L_s|| * ||H||``, which makes late contraction factors noisy;
    the recurrence keeps them within relative rounding of ``rho(B^-1 C)``.
    The recomputed residual of the final iterate is stored in ``true_residual``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != sp.n:
        raise ValueError(f"signal has {X.shape[0]} rows, graph has {sp.n} nodes")
    xnorm = np.linalg.norm(X)
    G = sp.iteration_matrix
    H = X.copy()
    R = sp.L_s @ H - X
    trace = IterationTrace()
    trace.residual_norms.append(float(np.linalg.norm(R)))
    if keep_iterates:
        trace.iterates.append(H)
    for t in range(1, max_iter + 1):
        H = jacobi_step(sp, H, X)
        R = G @ R
        r = float(np.linalg.norm(R))
        trace.residual_norms.append(r)
        if keep_iterates:
            trace.iterates.append(H)
        trace.steps = t
        if r <= tol * xnorm:
            trace.converged = True
            trace.true_residual = float(np.linalg.norm(sp.L_s @ H - X))
            return H, trace
    trace.true_residual = float(np.linalg.norm(sp.L_s @ H - X))
    raise ConvergenceError(
        f"no convergence after {max_iter} steps (relative residual "
        f"{trace.residual_norms[-1] / xnorm:.3e})", trace)


def solve_direct(sp: RegularSplitting, X: np.ndarray) -> np.ndarray:
    """LU solve of ``L_s H = X`` (the reference the iteration is checked against)."""
    return np.linalg.solve(sp.L_s, np.asarray(X, dtype=np.float64))


def diagonal_form(sp: RegularSplitting, F: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(W_s, W~_s)`` so one step reads ``A_hat H W_s + X W~_s``."""
    if F < 1:
        raise ValueError("feature width must be >= 1")
    s = sp.s
    return (s / (1.0 + s)) * np.eye(F), (1.0 / (1.0 + s)) * np.eye(F)


@dataclass
class PropertyCheck:
    name: str
    passed: bool
    residual: float
    detail: str = ""


@dataclass
class PropertyReport:
    s: float
    n: int
    checks: list[PropertyCheck]
    mu: list[float]
    tau: list[float]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> PropertyCheck:
        return next(c for c in self.checks if c.name == name)

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "num_nodes": self.n,
            "all_passed": self.all_passed,
            "properties": {c.name: {"passed": c.passed, "residual": c.residual, "detail": c.detail}
                           for c in self.checks},
            "mu": self.mu,
            "tau": self.tau,
        }


def verify_properties(sp: RegularSplitting, tol: float = 1e-8) -> PropertyReport:
    """Numerically check the five properties linking ``B^-1 C`` and ``L_s^-1 C``.

    Eigenvector agreement is tested basis-free: every eigenvector of one matrix
    must be an eigenvector of the other. This stays meaningful when eigenvalues
    repeat, where "equal up to sign" is not well defined.
    """
    n = sp.n
    B_inv = np.linalg.inv(sp.B)
    L_inv = np.linalg.inv(sp.L_s)
    G = B_inv @ sp.C
    T = L_inv @ sp.C
    checks = []

    comm = float(np.max(np.abs(G @ L_inv - L_inv @ sp.C @ B_inv)))
    checks.append(PropertyCheck("commutation", comm <= tol, comm,
                                "B^-1 C L_s^-1 = L_s^-1 C B^-1"))

    Gs, Ts = 0.5 * (G + G.T), 0.5 * (T + T.T)
    eg, et = eig_symmetric(Gs), eig_symmetric(Ts)
    U, V = eg.eigenvectors, et.eigenvectors

    def _leak(M, vecs):
        # ||M v - (v^T M v) v|| over unit eigenvector candidates v
        Mv = M @ vecs
        ray = np.sum(vecs * Mv, axis=0)
        return float(np.max(np.abs(Mv - vecs * ray), initial=0.0))

    vec_res = max(_leak(T, U), _leak(G, V))
    checks.append(PropertyCheck("shared_eigenvectors", vec_res <= tol, vec_res,
                                "eigenvectors of each matrix are eigenvectors of the other"))

    mu = np.sum(U * (G @ U), axis=0)
    tau = np.sum(U * (T @ U), axis=0)
    pair_res = float(np.max(np.abs(mu - tau / (1.0 + tau)), initial=0.0))
    checks.append(PropertyCheck("eigenvalue_map", pair_res <= tol, pair_res,
                                "mu_i = tau_i / (1 + tau_i)"))

    margin = float(np.min(tau) + 0.5)
    checks.append(PropertyCheck("tau_bound", margin > tol, margin,
                                "all tau_i > -1/2 (margin reported)"))

    rho_g = spectral_radius(G)
    rho_t = spectral_radius(T)
    rad_res = abs(rho_g - rho_t / (1.0 + rho_t))
    checks.append(PropertyCheck("radius_relation", rad_res <= tol, rad_res,
                                f"rho(B^-1 C) = {rho_g:.12g}, rho(L_s^-1 C) = {rho_t:.12g}"))

    order = np.argsort(mu, kind="stable")
    return PropertyReport(sp.s, n, checks, mu[order].tolist(), tau[order].tolist())

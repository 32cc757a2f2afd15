"""Pose error metrics in millimetres: MPJPE, PA-MPJPE, PCK and AUC."""

from __future__ import annotations

import warnings

import numpy as np

PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = np.arange(0.0, 151.0, 5.0)  # 0, 5, ..., 150


def _batch(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == 2 else a


def root_align(P: np.ndarray, root: int = 0) -> np.ndarray:
    P = _batch(P)
    return P - P[:, root:root + 1]


def joint_errors(Y, Y_hat, root: int = 0) -> np.ndarray:
    """Per-joint Euclidean errors after root alignment, shaped ``(B, N)``."""
    Y, Y_hat = _batch(Y), _batch(Y_hat)
    if Y.shape != Y_hat.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {Y_hat.shape}")
    return np.linalg.norm(root_align(Y, root) - root_align(Y_hat, root), axis=-1)


def mpjpe(Y, Y_hat, root: int = 0) -> float:
    return float(joint_errors(Y, Y_hat, root).mean())


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, bool]:
    """Similarity-align ``pred`` (N x 3) onto ``gt``.

    Rotation from the SVD solution of orthogonal Procrustes with a reflection
    fix, plus the least-squares uniform scale and translation. Returns the
    aligned pose and a flag that is True when ``pred`` collapses to a point and
    only translation was applied.
    """
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    P, G = pred - mu_p, gt - mu_g
    norm_p = np.sum(P * P)
    if norm_p < 1e-12 * max(1.0, np.sum(G * G)):
        return np.broadcast_to(mu_g, pred.shape).copy(), True
    U, S, Vt = np.linalg.svd(P.T @ G)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = U @ D @ Vt  # applied on the right: P @ R
    scale = np.sum(S * np.diag(D)) / norm_p
    return scale * P @ R + mu_g, False


def pa_mpjpe(Y, Y_hat, return_flags: bool = False):
    Y, Y_hat = _batch(Y), _batch(Y_hat)
    if Y.shape != Y_hat.shape:
        raise ValueError(f"shape mismatch {Y.shape} vs {Y_hat.shape}")
    errs, flags = [], []
    for gt, pred in zip(Y, Y_hat):
        aligned, degenerate = procrustes_align(pred, gt)
        flags.append(degenerate)
        errs.append(np.linalg.norm(aligned - gt, axis=-1).mean())
    if any(flags):
        warnings.warn(f"{sum(flags)} degenerate prediction(s) aligned by translation only")
    value = float(np.mean(errs))
    return (value, flags) if return_flags else value


def pck_auc(Y, Y_hat, threshold: float = PCK_THRESHOLD_MM, root: int = 0) -> tuple[float, float]:
    """Fraction of joints with error below ``threshold`` and the mean of that
    fraction over the 0..150 mm grid in 5 mm steps.

    The comparison is strict, except that an exactly zero error counts as
    correct at every threshold (including 0 mm), so a perfect prediction
    scores AUC 1.
    """
    err = joint_errors(Y, Y_hat, root)
    if err.size == 0:
        raise ValueError("empty evaluation set")
    exact = err == 0.0
    pck = float(np.mean((err < threshold) | exact))
    auc = float(np.mean([np.mean((err < t) | exact) for t in AUC_THRESHOLDS_MM]))
    return pck, auc


def best_constant_pose(Y, root: int = 0, iters: int = 200) -> np.ndarray:
    """Per-joint geometric median of root-aligned poses (Weiszfeld), i.e. the
    constant prediction minimising MPJPE on ``Y``."""
    Y = root_align(Y, root)
    med = Y.mean(axis=0)
    for _ in range(iters):
        d = np.linalg.norm(Y - med, axis=-1)
        w = 1.0 / np.maximum(d, 1e-9)
        med = np.sum(Y * w[..., None], axis=0) / np.sum(w, axis=0)[:, None]
    return med

"""Frechet distance between Gaussian fits of two feature populations.

d^2 = |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), computed without a
general matrix square root: the trace term uses the eigenvalues of the
symmetric product sqrt(S1) S2 sqrt(S1), which shares its spectrum with
S1 S2 but stays in symmetric-matrix land where eigh is reliable.
"""

from __future__ import annotations

import numpy as np

SYMMETRY_TOL = 1e-8


def moments_from_features(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and sample covariance (N-1 normalization) of row features."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D (rows, dims), got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError(
            f"need at least two feature rows for a sample covariance, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    mu = x.mean(axis=0)
    sigma = np.atleast_2d(np.cov(x, rowvar=False))
    return mu, sigma


def _check_covariance(sigma: np.ndarray, label: str) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"{label} must be square, got shape {sigma.shape}")
    if not np.all(np.isfinite(sigma)):
        raise ValueError(f"{label} contains non-finite values")
    if np.max(np.abs(sigma - sigma.T), initial=0.0) > SYMMETRY_TOL:
        raise ValueError(f"{label} is not symmetric within {SYMMETRY_TOL}")
    return (sigma + sigma.T) / 2.0


def _sqrt_psd(sym: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; small negative eigenvalues clamp to zero."""
    w, u = np.linalg.eigh(sym)
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.T


def frechet_distance(mu1: np.ndarray, sigma1: np.ndarray,
                     mu2: np.ndarray, sigma2: np.ndarray) -> float:
    """Distance between two Gaussians given their moments; never negative."""
    mu1 = np.asarray(mu1, dtype=np.float64).ravel()
    mu2 = np.asarray(mu2, dtype=np.float64).ravel()
    if mu1.shape != mu2.shape:
        raise ValueError(
            f"mean dimensions differ: {mu1.shape[0]} vs {mu2.shape[0]}")
    if not (np.all(np.isfinite(mu1)) and np.all(np.isfinite(mu2))):
        raise ValueError("means contain non-finite values")
    sigma1 = _check_covariance(sigma1, "covariance 1")
    sigma2 = _check_covariance(sigma2, "covariance 2")
    d = mu1.shape[0]
    if sigma1.shape[0] != d or sigma2.shape[0] != d:
        raise ValueError(
            f"moment dimensions disagree: means are {d}-dim, covariances "
            f"{sigma1.shape[0]}x{sigma1.shape[0]} and "
            f"{sigma2.shape[0]}x{sigma2.shape[0]}")

    s1h = _sqrt_psd(sigma1)
    inner = s1h @ sigma2 @ s1h
    inner = (inner + inner.T) / 2.0
    w = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    trace_sqrt = float(np.sqrt(w).sum())

    diff = mu1 - mu2
    fid = float(diff @ diff) + float(np.trace(sigma1)) \
        + float(np.trace(sigma2)) - 2.0 * trace_sqrt
    return max(fid, 0.0)

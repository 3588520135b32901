"""Covariance estimation and regularized inversion.

Implements the sample estimator, three shrinkage estimators (diagonal
Ledoit-Wolf, constant-correlation Ledoit-Wolf, and oracle-approximating
shrinkage), spectral truncation for PSD repair, and ridge inversion.

Conventions used throughout the library:

* the sample covariance is the unbiased 1/(m-1) estimator of demeaned data;
* shrinkage intensities follow the original publications, which define them
  through the biased 1/m moments, and are clipped to [0, 1];
* each shrinkage estimate is the convex combination
  ``intensity * target + (1 - intensity) * sample`` so the reported pieces
  reconstruct the estimate exactly.
"""
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateCovarianceError,
    InsufficientObservationsError,
    SingularMatrixError,
)

DEFAULT_EPSILON = 1e-6
RIDGE_SCALE = 1e-8

TARGET_SCALED_IDENTITY = "scaled-identity"
TARGET_CONSTANT_CORRELATION = "constant-correlation"


@dataclass
class ShrinkageResult:
    """A shrunk covariance estimate with its reconstruction pieces."""

    estimate: np.ndarray
    intensity: float
    target_kind: str
    target: np.ndarray
    sample: np.ndarray


def default_ridge(sigma: np.ndarray) -> float:
    """Scale-relative ridge: 1e-8 times the mean diagonal."""
    n = sigma.shape[-1]
    return RIDGE_SCALE * float(np.trace(sigma)) / n


def sample_cov(X: np.ndarray) -> np.ndarray:
    """Unbiased sample covariance of an m x N return matrix."""
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    if m < 2:
        raise InsufficientObservationsError(
            f"sample covariance needs at least 2 rows, got {m}"
        )
    Xc = X - X.mean(axis=0)
    return Xc.T @ Xc / (m - 1)


def _lw_diagonal_intensity(X: np.ndarray) -> float:
    # Ledoit-Wolf (2004) intensity toward mu*I, computed on the biased
    # 1/m covariance of centered data.
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    Xc = X - X.mean(axis=0)
    X2 = Xc**2
    emp_trace = np.sum(X2, axis=0) / m
    mu = np.sum(emp_trace) / n
    beta_ = np.sum(X2.T @ X2)
    delta_ = np.sum((Xc.T @ Xc) ** 2) / m**2
    delta = (delta_ - 2.0 * mu * np.sum(emp_trace) + n * mu**2) / n
    beta = (beta_ / m - delta_) / (m * n)
    if delta == 0 or beta <= 0:
        return 0.0
    return float(min(beta, delta) / delta)


def lw_diagonal(X: np.ndarray) -> ShrinkageResult:
    """Ledoit-Wolf shrinkage toward the scaled identity mu*I."""
    S = sample_cov(X)
    n = S.shape[0]
    mu = float(np.trace(S)) / n
    target = mu * np.eye(n)
    rho = min(max(_lw_diagonal_intensity(X), 0.0), 1.0)
    estimate = rho * target + (1.0 - rho) * S
    return ShrinkageResult(estimate, rho, TARGET_SCALED_IDENTITY, target, S)


def _constant_correlation_target(S: np.ndarray) -> np.ndarray:
    sd = np.sqrt(np.diag(S))
    denom = np.outer(sd, sd)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, S / denom, 0.0)
    n = S.shape[0]
    off = ~np.eye(n, dtype=bool)
    r_bar = corr[off].mean() if n > 1 else 0.0
    target = r_bar * denom
    np.fill_diagonal(target, np.diag(S))
    return target


def _lw_constant_correlation_intensity(X: np.ndarray) -> float:
    # Ledoit-Wolf (2003) intensity toward the constant-correlation target,
    # on 1/t moments of centered data.
    X = np.asarray(X, dtype=float)
    t, n = X.shape
    x = X - X.mean(axis=0)
    sample = x.T @ x / t
    var = np.diag(sample)
    sqrtvar = np.sqrt(var)
    denom = np.outer(sqrtvar, sqrtvar)
    off = ~np.eye(n, dtype=bool)
    r_bar = (sample / denom)[off].mean() if n > 1 else 0.0
    prior = r_bar * denom
    np.fill_diagonal(prior, var)

    y = x**2
    phi_mat = y.T @ y / t - sample**2
    phi = phi_mat.sum()

    term1 = (x**3).T @ x / t
    help_mat = x.T @ x / t
    help_diag = np.diag(help_mat)
    term2 = help_diag[:, None] * sample
    term3 = help_mat * var[:, None]
    term4 = var[:, None] * sample
    theta_mat = term1 - term2 - term3 + term4
    np.fill_diagonal(theta_mat, 0.0)
    rho = np.sum(np.diag(phi_mat)) + r_bar * np.sum(
        np.outer(1.0 / sqrtvar, sqrtvar) * theta_mat
    )

    gamma = np.linalg.norm(sample - prior, "fro") ** 2
    if gamma == 0:
        return 0.0
    kappa = (phi - rho) / gamma
    return float(kappa / t)


def lw_constant_correlation(X: np.ndarray) -> ShrinkageResult:
    """Ledoit-Wolf shrinkage toward the constant-correlation target."""
    S = sample_cov(X)
    target = _constant_correlation_target(S)
    rho = min(max(_lw_constant_correlation_intensity(X), 0.0), 1.0)
    estimate = rho * target + (1.0 - rho) * S
    return ShrinkageResult(estimate, rho, TARGET_CONSTANT_CORRELATION, target, S)


def _oas_intensity(X: np.ndarray) -> float:
    # Chen et al. (2010) oracle-approximating intensity on 1/m moments.
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    Xc = X - X.mean(axis=0)
    emp = Xc.T @ Xc / m
    mu = float(np.trace(emp)) / n
    alpha = float(np.mean(emp**2))
    num = alpha + mu**2
    den = (m + 1.0) * (alpha - mu**2 / n)
    if den == 0:
        return 1.0
    return float(min(num / den, 1.0))


def oas(X: np.ndarray) -> ShrinkageResult:
    """Oracle-approximating shrinkage toward the scaled identity."""
    S = sample_cov(X)
    n = S.shape[0]
    mu = float(np.trace(S)) / n
    target = mu * np.eye(n)
    rho = min(max(_oas_intensity(X), 0.0), 1.0)
    estimate = rho * target + (1.0 - rho) * S
    return ShrinkageResult(estimate, rho, TARGET_SCALED_IDENTITY, target, S)


def truncated_reconstruct(sigma: np.ndarray, eps: float = DEFAULT_EPSILON) -> np.ndarray:
    """Rebuild a covariance from eigenpairs with eigenvalue >= eps * lambda_max.

    PSD repair: small or negative eigenvalues are dropped, so the result's
    retained spectrum has condition number at most 1/eps.
    """
    sigma = np.asarray(sigma, dtype=float)
    lam, V = np.linalg.eigh(sigma)
    lam_max = lam[-1]
    if lam_max <= 0:
        raise DegenerateCovarianceError(
            "no positive eigenvalue to retain after truncation"
        )
    kept = lam >= eps * lam_max
    lam = np.where(kept, lam, 0.0)
    return (V * lam) @ V.T


def invert_with_ridge(sigma: np.ndarray, ridge: float) -> np.ndarray:
    """Exact symmetric inverse of (sigma + ridge * I)."""
    sigma = np.asarray(sigma, dtype=float)
    n = sigma.shape[0]
    A = sigma + ridge * np.eye(n)
    try:
        P = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"matrix singular after ridge {ridge}") from exc
    if not np.all(np.isfinite(P)):
        raise SingularMatrixError(f"matrix singular after ridge {ridge}")
    return (P + P.T) / 2.0

"""Pure-NumPy batched kernels for the portfolio solve chain.

Fallback backend: numerically identical (up to floating-point reduction
order) to the compiled extension in ``_core``.  Every function takes a
stacked batch of covariance matrices and returns per-instance results plus
an ``ok`` mask instead of raising, so one degenerate sample cannot poison a
training batch.
"""
import numpy as np

BACKEND_NAME = "python"

RIDGE_SCALE = 1e-8


def batch_gmvp(sigma: np.ndarray, eps: float = 1e-6, ridge: float | None = None):
    """Batched truncate-ridge-invert solve: (B,N,N) -> (w, P, D, ok).

    Mirrors the reference single-instance path: eigenpairs below
    ``eps * lambda_max`` are zeroed before the ridge is added, and the ridge
    defaults to ``1e-8 * trace / N`` per instance.  Instances whose largest
    eigenvalue is non-positive are flagged ``ok = False`` with zeroed
    outputs.
    """
    sigma = np.asarray(sigma, dtype=float)
    B, n, _ = sigma.shape
    lam, V = np.linalg.eigh(sigma)
    lam_max = lam[:, -1]
    ok = lam_max > 0.0
    if ridge is None:
        delta = RIDGE_SCALE * np.trace(sigma, axis1=1, axis2=2) / n
    else:
        delta = np.full(B, float(ridge))
    lam_kept = np.where(lam >= eps * lam_max[:, None], lam, 0.0)
    denom = lam_kept + delta[:, None]
    ok &= np.all(denom > 0.0, axis=1)
    safe = np.where(ok[:, None], denom, 1.0)
    P = np.einsum("bik,bk,bjk->bij", V, 1.0 / safe, V)
    P = (P + np.transpose(P, (0, 2, 1))) / 2.0
    Pone = P.sum(axis=2)
    D = Pone.sum(axis=1)
    ok &= np.abs(D) > 1e-12 * np.maximum(1.0, np.abs(P).max(axis=(1, 2)))
    w = np.where(ok[:, None], Pone / np.where(ok, D, 1.0)[:, None], 0.0)
    P = np.where(ok[:, None, None], P, 0.0)
    D = np.where(ok, D, 0.0)
    return w, P, D, ok


def batch_quadform(w: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Per-instance portfolio variance w' Sigma w."""
    return np.einsum("bi,bij,bj->b", w, sigma, w)


def batch_decision_grad(
    w: np.ndarray, P: np.ndarray, D: np.ndarray, sigma_true: np.ndarray
) -> np.ndarray:
    """Free-entry regret gradient dL/dSigma for each instance.

    ``G = -P f w' + D (f'w) w w'`` with ``f = 2 Sigma_true w``.
    """
    f = 2.0 * np.einsum("bij,bj->bi", sigma_true, w)
    Pf = np.einsum("bij,bj->bi", P, f)
    fw = np.einsum("bi,bi->b", f, w)
    return -np.einsum("bi,bj->bij", Pf, w) + (D * fw)[:, None, None] * np.einsum(
        "bi,bj->bij", w, w
    )

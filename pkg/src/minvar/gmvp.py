"""Differentiable minimum-variance portfolio layer.

The global minimum-variance portfolio (GMVP) under a budget constraint has
the closed form ``w = P1 / (1'P1)`` with ``P`` the (regularized) inverse of
the covariance forecast.  This module provides that solve, the regret loss
against a realized covariance, and the exact gradient chain through the
solve: the decision Jacobian ``J = dw/dSigma`` and the loss gradient
``dL/dSigma`` consumed by the forecaster's backward pass.

Vectorization convention: ``vec`` stacks columns (Fortran order), so
``vec(A X B) = (B' kron A) vec(X)`` fixes all Kronecker index bookkeeping.
"""
from dataclasses import dataclass

import numpy as np

from .covariance import (
    DEFAULT_EPSILON,
    default_ridge,
    invert_with_ridge,
    truncated_reconstruct,
)
from .errors import DegenerateBudgetError

BUDGET_TOL = 1e-12


@dataclass
class GmvpSolution:
    """Weights plus the solve intermediates reused by gradients."""

    w: np.ndarray
    precision: np.ndarray
    budget: float  # 1'P1
    ridge: float


def solve_gmvp_full(
    sigma: np.ndarray, eps: float = DEFAULT_EPSILON, ridge: float | None = None
) -> GmvpSolution:
    """GMVP solve returning the precision matrix and budget scalar."""
    sigma = np.asarray(sigma, dtype=float)
    if ridge is None:
        ridge = default_ridge(sigma)
    reconstructed = truncated_reconstruct(sigma, eps)
    P = invert_with_ridge(reconstructed, ridge)
    one = np.ones(sigma.shape[0])
    Pone = P @ one
    budget = float(one @ Pone)
    if abs(budget) < BUDGET_TOL * max(1.0, float(np.abs(P).max())):
        raise DegenerateBudgetError("1'P1 is zero; weights cannot be normalized")
    return GmvpSolution(Pone / budget, P, budget, ridge)


def solve_gmvp(
    sigma: np.ndarray, eps: float = DEFAULT_EPSILON, ridge: float | None = None
) -> np.ndarray:
    """Budget-normalized minimum-variance weights for a covariance forecast."""
    return solve_gmvp_full(sigma, eps, ridge).w


@dataclass
class RegretValue:
    regret: float
    achieved_variance: float
    oracle_variance: float


def regret(
    w: np.ndarray,
    sigma_true: np.ndarray,
    eps: float = DEFAULT_EPSILON,
    ridge: float | None = None,
    oracle_w: np.ndarray | None = None,
) -> RegretValue:
    """Achieved variance under sigma_true minus the oracle GMVP variance.

    ``oracle_w`` short-circuits the oracle solve when the caller has already
    computed it (the oracle never changes for a fixed sigma_true).
    """
    w = np.asarray(w, dtype=float)
    sigma_true = np.asarray(sigma_true, dtype=float)
    if w.shape[0] != sigma_true.shape[0]:
        raise ValueError(
            f"weight/covariance shape mismatch: {w.shape} vs {sigma_true.shape}"
        )
    if oracle_w is None:
        oracle_w = solve_gmvp(sigma_true, eps, ridge)
    achieved = float(w @ sigma_true @ w)
    oracle = float(oracle_w @ sigma_true @ oracle_w)
    return RegretValue(achieved - oracle, achieved, oracle)


def grad_loss_wrt_weights(w: np.ndarray, sigma_true: np.ndarray) -> np.ndarray:
    """Gradient of the achieved variance w'Sigma_true w: exactly 2 Sigma_true w."""
    w = np.asarray(w, dtype=float)
    sigma_true = np.asarray(sigma_true, dtype=float)
    if w.shape[0] != sigma_true.shape[0]:
        raise ValueError(
            f"weight/covariance shape mismatch: {w.shape} vs {sigma_true.shape}"
        )
    return 2.0 * sigma_true @ w


@dataclass
class DecisionJacobian:
    """Dense N x N^2 Jacobian dw/dSigma with its normalization scalar."""

    J: np.ndarray
    D: float


def decision_jacobian(
    sigma: np.ndarray, eps: float = DEFAULT_EPSILON, ridge: float | None = None
) -> DecisionJacobian:
    """Jacobian of the GMVP weights with respect to the covariance entries.

    ``J = -(w' kron P) + D vec(w) (w kron w)'`` where ``P`` is the solve's
    precision matrix and ``D = 1'P1``.  Columns index covariance entries in
    column-stacked order.
    """
    sol = solve_gmvp_full(sigma, eps, ridge)
    w, P, D = sol.w, sol.precision, sol.budget
    J = -np.kron(w[None, :], P) + D * np.outer(w, np.kron(w, w))
    return DecisionJacobian(J, D)


def grad_loss_wrt_sigma(
    sigma: np.ndarray,
    sigma_true: np.ndarray,
    eps: float = DEFAULT_EPSILON,
    ridge: float | None = None,
) -> np.ndarray:
    """Regret gradient with respect to the covariance forecast entries.

    Equal to ``unvec(F J)`` with ``F = 2 Sigma_true w`` but assembled in
    closed form without materializing J:

        G = -P f w' + D (f'w) w w',   f = 2 Sigma_true w.

    Entries are free-entry derivatives; downstream consumers that perturb
    only symmetric matrices should use the symmetric part (G + G')/2, which
    carries the same inner products against symmetric perturbations.
    """
    sol = solve_gmvp_full(sigma, eps, ridge)
    w, P, D = sol.w, sol.precision, sol.budget
    f = grad_loss_wrt_weights(w, np.asarray(sigma_true, dtype=float))
    return -np.outer(P @ f, w) + D * float(f @ w) * np.outer(w, w)

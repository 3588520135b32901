"""Training loops for the covariance forecaster.

Two objectives share one loop: ``dfl`` minimizes decision regret through
the portfolio solve, ``pfl`` minimizes the mean-squared error of the
covariance forecast.  Optimization is textbook Adam on mini-batches with
per-epoch seeded shuffling, early stopping on validation loss, and
best-epoch checkpoint restore.

Degenerate portfolio solves inside a batch are skipped and counted; more
than 1% skipped samples in any epoch aborts the run, so rare conditioning
hiccups survive but systematic failure surfaces loudly.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from . import core
from .errors import InvalidConfigError, TrainingAbortError
from .forecaster import (
    H_DIM_DEFAULT,
    ForecasterParams,
    backward_batch,
    forward_batch,
    init_params,
)

OBJECTIVE_DFL = "dfl"
OBJECTIVE_PFL = "pfl"

MAX_SKIP_FRACTION = 0.01

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    objective: str
    learning_rate: float
    batch_size: int
    seed: int
    delta_in: int
    delta_out: int
    max_epochs: int = 50
    patience: int = 7
    eps: float = 1e-6
    ridge: float | None = None
    h_dim: int = H_DIM_DEFAULT

    def __post_init__(self):
        if self.objective not in (OBJECTIVE_DFL, OBJECTIVE_PFL):
            raise InvalidConfigError(f"unknown objective {self.objective!r}")
        if self.learning_rate <= 0:
            raise InvalidConfigError("learning_rate must be positive")
        if self.batch_size < 1:
            raise InvalidConfigError("batch_size must be >= 1")
        if self.patience >= self.max_epochs:
            raise InvalidConfigError("patience must be smaller than max_epochs")


@dataclass
class TrainRecord:
    train_loss: list = field(default_factory=list)
    valid_loss: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1
    stopping_reason: str = ""
    skipped_samples: int = 0


def mse_loss(sigma_hat: np.ndarray, sigma_true: np.ndarray) -> float:
    """Mean over all N^2 entries of squared forecast error."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    sigma_true = np.asarray(sigma_true, dtype=float)
    if sigma_hat.shape != sigma_true.shape:
        raise ValueError(f"shape mismatch: {sigma_hat.shape} vs {sigma_true.shape}")
    return float(np.mean((sigma_hat - sigma_true) ** 2))


def mse_grad(sigma_hat: np.ndarray, sigma_true: np.ndarray) -> np.ndarray:
    """Gradient of mse_loss in the forecast: (2 / N^2) (Sigma_hat - Sigma_true)."""
    sigma_hat = np.asarray(sigma_hat, dtype=float)
    sigma_true = np.asarray(sigma_true, dtype=float)
    if sigma_hat.shape != sigma_true.shape:
        raise ValueError(f"shape mismatch: {sigma_hat.shape} vs {sigma_true.shape}")
    n = sigma_hat.shape[-1]
    return 2.0 / n**2 * (sigma_hat - sigma_true)


class AdamState:
    """First/second moment accumulators plus the step counter."""

    def __init__(self, params: ForecasterParams):
        self.m = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.arrays().items()}
        self.t = 0


def adam_step(params: ForecasterParams, grads: dict, state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update."""
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise TrainingAbortError("non-finite gradient")
    state.t += 1
    c1 = 1.0 - ADAM_BETA1**state.t
    c2 = 1.0 - ADAM_BETA2**state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g**2
        getattr(params, name)[...] -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def stack_windows(windows):
    """Collate a WindowSample list into (inputs, targets, anchors)."""
    x = np.stack([w.x_in for w in windows])
    sigma = np.stack([w.sigma_true for w in windows])
    anchors = [w.anchor_date for w in windows]
    return x, sigma, anchors


class _Objective:
    """Per-objective loss/gradient on a batch, with skip masks for dfl."""

    def __init__(self, config: TrainConfig, sigma_true: np.ndarray):
        self.config = config
        self.kind = config.objective
        if self.kind == OBJECTIVE_DFL:
            # oracle term is constant per window; solve it once up front
            wo, _, _, ok = core.batch_gmvp(sigma_true, config.eps, config.ridge)
            if not np.all(ok):
                raise TrainingAbortError(
                    f"{int((~ok).sum())} target covariances have no positive spectrum"
                )
            self.oracle_var = core.batch_quadform(wo, sigma_true)

    def loss_and_grad(self, sigma_hat, sigma_true, idx):
        """Returns (per-sample loss, upstream dLoss/dSigma, ok mask)."""
        if self.kind == OBJECTIVE_PFL:
            n = sigma_hat.shape[-1]
            diff = sigma_hat - sigma_true
            loss = np.mean(diff**2, axis=(1, 2))
            return loss, 2.0 / n**2 * diff, np.ones(len(sigma_hat), dtype=bool)
        w, P, D, ok = core.batch_gmvp(sigma_hat, self.config.eps, self.config.ridge)
        loss = core.batch_quadform(w, sigma_true) - self.oracle_var[idx]
        G = core.batch_decision_grad(w, P, D, sigma_true)
        return loss, G, ok

    def valid_loss(self, sigma_hat, sigma_true):
        if self.kind == OBJECTIVE_PFL:
            return float(np.mean((sigma_hat - sigma_true) ** 2)), 0
        w, _, _, ok = core.batch_gmvp(sigma_hat, self.config.eps, self.config.ridge)
        loss = core.batch_quadform(w, sigma_true) - self.oracle_var
        if not np.any(ok):
            raise TrainingAbortError("every validation solve was degenerate")
        return float(loss[ok].mean()), int((~ok).sum())


def train(config: TrainConfig, train_windows, valid_windows, init_scale: float = 1.0):
    """Fit the forecaster; returns (best-epoch params, TrainRecord)."""
    if not train_windows or not valid_windows:
        raise InvalidConfigError("training and validation windows must be nonempty")
    x_tr, s_tr, anchors = stack_windows(train_windows)
    x_va, s_va, _ = stack_windows(valid_windows)
    n_assets = x_tr.shape[2]

    params = init_params(
        config.seed, config.delta_in, n_assets, config.h_dim, init_scale
    )
    state = AdamState(params)
    record = TrainRecord()
    objective = _Objective(config, s_tr)
    valid_objective = _Objective(config, s_va)

    best_loss = np.inf
    best_params = params.copy()
    epochs_since_best = 0
    n = len(train_windows)

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng(config.seed + epoch).permutation(n)
        epoch_loss = 0.0
        epoch_count = 0
        epoch_skipped = 0
        for lo in range(0, n, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            sigma_hat, cache = forward_batch(params, x_tr[idx])
            loss, G, ok = objective.loss_and_grad(sigma_hat, s_tr[idx], idx)
            if not np.all(np.isfinite(loss[ok])):
                bad = idx[ok][~np.isfinite(loss[ok])][0]
                raise TrainingAbortError(
                    f"non-finite loss at window anchored {anchors[bad]}"
                )
            epoch_skipped += int((~ok).sum())
            if not np.any(ok):
                continue
            # mean gradient over the usable samples only
            G = np.where(ok[:, None, None], G, 0.0) * (len(idx) / ok.sum())
            grads = backward_batch(params, cache, G)
            adam_step(params, grads, state, config.learning_rate)
            epoch_loss += float(loss[ok].sum())
            epoch_count += int(ok.sum())
        if epoch_skipped > MAX_SKIP_FRACTION * n:
            raise TrainingAbortError(
                f"{epoch_skipped}/{n} degenerate solves in epoch {epoch}"
            )
        record.skipped_samples += epoch_skipped

        sigma_v, _ = forward_batch(params, x_va)
        vloss, v_skipped = valid_objective.valid_loss(sigma_v, s_va)
        if v_skipped > MAX_SKIP_FRACTION * len(valid_windows):
            raise TrainingAbortError(
                f"{v_skipped}/{len(valid_windows)} degenerate validation solves"
            )
        record.train_loss.append(epoch_loss / max(epoch_count, 1))
        record.valid_loss.append(vloss)
        record.seconds.append(time.perf_counter() - t0)

        if vloss < best_loss:
            best_loss = vloss
            best_params = params.copy()
            record.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                record.stopping_reason = "early-stopped"
                break
    else:
        record.stopping_reason = "max-epochs"
    return best_params, record


def grid_search(grid, train_windows, valid_windows, init_scale: float = 1.0):
    """Train every config; best = lowest best-epoch validation loss."""
    if not grid:
        raise InvalidConfigError("empty hyperparameter grid")
    results = []
    failures = []
    for config in grid:
        try:
            params, record = train(config, train_windows, valid_windows, init_scale)
            results.append((config, params, record))
        except TrainingAbortError as exc:
            failures.append((config, exc))
    if not results:
        raise TrainingAbortError(
            f"all {len(failures)} grid configurations failed; first: {failures[0][1]}"
        )
    best = min(results, key=lambda r: r[2].valid_loss[r[2].best_epoch])
    return best, results

"""Rolling buy-and-hold backtests and annualized-volatility reporting.

A strategy maps the trailing input window to portfolio weights at each
rebalance date; the weights are applied unchanged to every daily return
in the following hold block (no intra-block drift accounting).  Realized
daily portfolio returns are concatenated across blocks and summarized as
annualized volatility.

Weights at a rebalance are functions of strictly earlier rows only; the
test suite enforces this by poisoning future rows and checking that the
weights do not move.
"""
from dataclasses import dataclass, field

import numpy as np

from .covariance import (
    DEFAULT_EPSILON,
    lw_constant_correlation,
    lw_diagonal,
    oas,
    sample_cov,
)
from .data import ReturnsPanel
from .errors import (
    InsufficientHistoryError,
    InsufficientObservationsError,
    InvalidConfigError,
    MinvarError,
    RebalanceError,
)
from .forecaster import ForecasterParams, forward
from .gmvp import solve_gmvp
from .reportio import write_report

TRADING_DAYS_PER_YEAR = 252

KIND_EW = "EW"
KIND_HISTORICAL = "Historical"
KIND_LW_D = "LW-D"
KIND_LW_CC = "LW-CC"
KIND_OAS = "OAS"
KIND_PFL = "PFL"
KIND_DFL = "DFL"

ESTIMATOR_KINDS = (KIND_HISTORICAL, KIND_LW_D, KIND_LW_CC, KIND_OAS)
LEARNED_KINDS = (KIND_PFL, KIND_DFL)
ALL_KINDS = (KIND_EW,) + ESTIMATOR_KINDS + LEARNED_KINDS


@dataclass
class Strategy:
    """A weight rule: equal-weight, an estimator + solve, or a model + solve."""

    kind: str
    params: ForecasterParams | None = None
    eps: float = DEFAULT_EPSILON
    ridge: float | None = None

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise InvalidConfigError(f"unknown strategy kind {self.kind!r}")
        if self.kind in LEARNED_KINDS and self.params is None:
            raise InvalidConfigError(f"{self.kind} strategy needs model parameters")

    def forecast(self, window: np.ndarray) -> np.ndarray:
        """Covariance forecast from a delta_in x N window of past returns."""
        if self.kind == KIND_HISTORICAL:
            return sample_cov(window)
        if self.kind == KIND_LW_D:
            return lw_diagonal(window).estimate
        if self.kind == KIND_LW_CC:
            return lw_constant_correlation(window).estimate
        if self.kind == KIND_OAS:
            return oas(window).estimate
        sigma, _, _ = forward(self.params, window)
        return sigma

    def weights(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=float)
        n = window.shape[1]
        if self.kind == KIND_EW:
            return np.full(n, 1.0 / n)
        return solve_gmvp(self.forecast(window), self.eps, self.ridge)


@dataclass
class BacktestReport:
    strategy: str
    dates: list
    weights: np.ndarray
    daily_returns: np.ndarray
    ann_vol: float
    tickers: list = field(default_factory=list)
    seed: int | None = None


def annualized_volatility(daily_returns) -> float:
    """Sample std (1/(m-1)) of daily returns, scaled by sqrt(252)."""
    r = np.asarray(daily_returns, dtype=float).ravel()
    if r.size < 2:
        raise InsufficientObservationsError(
            f"need >= 2 daily returns, got {r.size}"
        )
    return float(np.std(r, ddof=1) * np.sqrt(TRADING_DAYS_PER_YEAR))


def run_backtest(
    strategy: Strategy, test_panel: ReturnsPanel, delta_in: int, delta_out: int
) -> BacktestReport:
    """Walk the panel: rebalance every delta_out days, hold in between.

    The panel must carry delta_in rows of lead-in history; the first
    rebalance lands on row delta_in and only complete hold blocks are
    evaluated.
    """
    values = test_panel.values
    n_days = values.shape[0]
    if delta_in < 1 or delta_out < 1:
        raise InvalidConfigError("delta_in and delta_out must be positive")
    if n_days < delta_in + delta_out:
        raise InsufficientHistoryError(
            f"panel has {n_days} rows; need {delta_in + delta_out} for one rebalance"
        )
    weights = []
    dates = []
    blocks = []
    t = delta_in
    while t + delta_out <= n_days:
        window = values[t - delta_in : t]
        try:
            w = strategy.weights(window)
        except MinvarError as exc:
            raise RebalanceError(
                f"{strategy.kind} failed at {test_panel.dates[t]}: {exc}"
            ) from exc
        weights.append(w)
        dates.append(test_panel.dates[t])
        blocks.append(values[t : t + delta_out] @ w)
        t += delta_out
    daily = np.concatenate(blocks)
    return BacktestReport(
        strategy=strategy.kind,
        dates=dates,
        weights=np.array(weights),
        daily_returns=daily,
        ann_vol=annualized_volatility(daily),
        tickers=list(test_panel.tickers),
    )


@dataclass
class SuiteRow:
    strategy: str
    mean_vol: float | None
    std_vol: float | None
    n_seeds: int
    error: str | None = None


def run_suite(
    strategies,
    test_panel: ReturnsPanel,
    delta_in: int,
    delta_out: int,
    models: dict | None = None,
) -> tuple[list, list]:
    """Backtest every strategy kind; learned kinds aggregate over seeds.

    models maps a learned kind to {seed: ForecasterParams}.  Failures do
    not abort the suite: the row records the error and the table stays
    partial.  Returns (rows, reports).
    """
    models = models or {}
    rows = []
    reports = []
    for kind in strategies:
        try:
            if kind in LEARNED_KINDS:
                per_seed = models.get(kind)
                if not per_seed:
                    raise InvalidConfigError(f"no checkpoints provided for {kind}")
                vols = []
                for seed in sorted(per_seed):
                    report = run_backtest(
                        Strategy(kind, params=per_seed[seed]),
                        test_panel,
                        delta_in,
                        delta_out,
                    )
                    report.seed = seed
                    reports.append(report)
                    vols.append(report.ann_vol)
                rows.append(
                    SuiteRow(kind, float(np.mean(vols)), float(np.std(vols)), len(vols))
                )
            else:
                report = run_backtest(Strategy(kind), test_panel, delta_in, delta_out)
                reports.append(report)
                rows.append(SuiteRow(kind, report.ann_vol, None, 1))
        except MinvarError as exc:
            rows.append(SuiteRow(kind, None, None, 0, error=str(exc)))
    return rows, reports


def delta_ablation(
    build_strategy, panel: ReturnsPanel, delta_in_list, delta_out_list
) -> np.ndarray:
    """Annualized vol over the (delta_in, delta_out) grid; NaN = infeasible."""
    grid = np.full((len(delta_in_list), len(delta_out_list)), np.nan)
    for i, din in enumerate(delta_in_list):
        for j, dout in enumerate(delta_out_list):
            try:
                grid[i, j] = run_backtest(build_strategy(din, dout), panel, din, dout).ann_vol
            except InsufficientHistoryError:
                continue
    return grid


def write_vol_table(rows, path) -> None:
    write_report(
        path,
        "vol_table.v1",
        ["strategy", "ann_vol_mean", "ann_vol_std", "n_seeds", "error"],
        [[r.strategy, r.mean_vol, r.std_vol, r.n_seeds, r.error or ""] for r in rows],
    )


def write_weights_history(reports, path) -> None:
    if not reports:
        raise InvalidConfigError("no backtest reports to write")
    tickers = reports[0].tickers
    rows = []
    for report in reports:
        for date, w in zip(report.dates, report.weights):
            rows.append([report.strategy, report.seed, date, *[float(x) for x in w]])
    write_report(
        path, "weights_history.v1", ["strategy", "seed", "date", *tickers], rows
    )


def write_ablation_grid(grid, delta_in_list, delta_out_list, path) -> None:
    rows = []
    for i, din in enumerate(delta_in_list):
        for j, dout in enumerate(delta_out_list):
            cell = grid[i, j]
            rows.append([din, dout, None if np.isnan(cell) else float(cell)])
    write_report(path, "ablation_grid.v1", ["delta_in", "delta_out", "ann_vol"], rows)

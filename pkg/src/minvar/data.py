"""Return-panel ingestion, universe filtering, window slicing, and synthesis.

A panel is a dense T x N matrix of daily simple returns with strictly
increasing dates and no missing entries; assets with any missing value are
dropped whole (never imputed).  Windows pair a length ``delta_in`` input
block with the sample covariance of the following ``delta_out`` rows and
never cross split boundaries.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .covariance import sample_cov
from .errors import (
    IngestionError,
    InsufficientHistoryError,
    InvalidConfigError,
    UniverseTooSmallError,
)


@dataclass
class ReturnsPanel:
    """Daily simple returns: values[t, i] for dates[t], tickers[i]."""

    dates: list
    tickers: list
    values: np.ndarray

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    @property
    def n_assets(self) -> int:
        return self.values.shape[1]

    def validate(self) -> None:
        if len(self.dates) != self.values.shape[0]:
            raise InvalidConfigError("date count does not match row count")
        if len(self.tickers) != self.values.shape[1]:
            raise InvalidConfigError("ticker count does not match column count")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise InvalidConfigError("dates must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise InvalidConfigError("panel contains non-finite entries")


@dataclass
class WindowSample:
    """One forecasting sample: inputs, the future-window covariance, anchor."""

    x_in: np.ndarray
    sigma_true: np.ndarray
    anchor_date: object


@dataclass
class SplitSpec:
    train_frac: float = 0.6
    valid_frac: float = 0.2
    test_frac: float = 0.2

    def __post_init__(self):
        total = self.train_frac + self.valid_frac + self.test_frac
        if abs(total - 1.0) > 1e-12:
            raise InvalidConfigError(f"split fractions sum to {total}, expected 1")
        if min(self.train_frac, self.valid_frac, self.test_frac) < 0:
            raise InvalidConfigError("split fractions must be nonnegative")


def load_returns(path) -> ReturnsPanel:
    """Load a `date,TICKER1,TICKER2,...` CSV into a panel.

    Columns with any unparseable or missing value are excluded; rows are
    sorted by date.  Raises when fewer than two assets survive.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no such file: {path}")
    with path.open() as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise IngestionError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) < 2:
        raise IngestionError(f"{path}: header must be date plus tickers")
    tickers = [h.strip() for h in header[1:]]
    n = len(tickers)
    dates = []
    rows = []
    bad_cols = set()
    for ln_no, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != n + 1:
            raise IngestionError(f"{path}:{ln_no}: expected {n + 1} cells, got {len(cells)}")
        date = cells[0].strip()
        if not date:
            raise IngestionError(f"{path}:{ln_no}: empty date")
        row = np.full(n, np.nan)
        for j, cell in enumerate(cells[1:]):
            cell = cell.strip()
            if not cell:
                bad_cols.add(j)
                continue
            try:
                row[j] = float(cell)
            except ValueError:
                raise IngestionError(
                    f"{path}:{ln_no}: column {tickers[j]}: cannot parse {cell!r}"
                ) from None
        dates.append(date)
        rows.append(row)
    if len(set(dates)) != len(dates):
        raise IngestionError(f"{path}: duplicate dates")
    values = np.array(rows)
    bad_cols |= {j for j in range(n) if not np.all(np.isfinite(values[:, j]))}
    keep = [j for j in range(n) if j not in bad_cols]
    if len(keep) < 2:
        raise UniverseTooSmallError(
            f"{path}: only {len(keep)} asset(s) with complete data"
        )
    order = np.argsort(dates)
    panel = ReturnsPanel(
        dates=[dates[i] for i in order],
        tickers=[tickers[j] for j in keep],
        values=values[np.ix_(order, keep)],
    )
    panel.validate()
    return panel


def filter_universe(panel: ReturnsPanel, corr_threshold: float = 0.95) -> ReturnsPanel:
    """Drop later-listed assets until all pairwise correlations are below threshold."""
    if not 0.0 < corr_threshold <= 1.0:
        raise InvalidConfigError(f"corr_threshold must be in (0, 1], got {corr_threshold}")
    corr = np.corrcoef(panel.values, rowvar=False)
    n = panel.n_assets
    dropped = set()
    for i in range(n):
        if i in dropped:
            continue
        for j in range(i + 1, n):
            if j in dropped:
                continue
            if corr[i, j] >= corr_threshold:
                dropped.add(j)
    keep = [j for j in range(n) if j not in dropped]
    if len(keep) < 2:
        raise UniverseTooSmallError(
            f"universe reduced to {len(keep)} asset(s) by the correlation filter"
        )
    return ReturnsPanel(
        dates=list(panel.dates),
        tickers=[panel.tickers[j] for j in keep],
        values=panel.values[:, keep].copy(),
    )


def make_windows(
    panel: ReturnsPanel, delta_in: int, delta_out: int, stride: int = 1
) -> list:
    """Maximal list of rolling windows at the given stride.

    Window ``k`` starts at row ``k * stride``; its inputs are the next
    ``delta_in`` rows and its target covariance comes from the
    ``delta_out`` rows after those.
    """
    if stride < 1:
        raise InvalidConfigError(f"stride must be >= 1, got {stride}")
    T = panel.n_days
    if delta_in + delta_out > T:
        raise InsufficientHistoryError(
            f"need {delta_in + delta_out} rows, panel has {T}"
        )
    windows = []
    s = 0
    while s + delta_in + delta_out <= T:
        x_in = panel.values[s : s + delta_in]
        future = panel.values[s + delta_in : s + delta_in + delta_out]
        windows.append(
            WindowSample(
                x_in=x_in,
                sigma_true=sample_cov(future),
                anchor_date=panel.dates[s + delta_in - 1],
            )
        )
        s += stride
    return windows


def split_panel(panel: ReturnsPanel, spec: SplitSpec):
    """Chronological train/valid/test segments; flooring remainder goes to train."""
    T = panel.n_days
    n_valid = int(T * spec.valid_frac)
    n_test = int(T * spec.test_frac)
    n_train = T - n_valid - n_test

    def piece(lo, hi):
        return ReturnsPanel(
            dates=list(panel.dates[lo:hi]),
            tickers=list(panel.tickers),
            values=panel.values[lo:hi].copy(),
        )

    return (
        piece(0, n_train),
        piece(n_train, n_train + n_valid),
        piece(n_train + n_valid, T),
    )


@dataclass
class RegimeSpec:
    """Piecewise-stationary synthetic design: one covariance per segment."""

    covariances: list
    segment_length: int

    def __post_init__(self):
        if self.segment_length < 1:
            raise InvalidConfigError("segment_length must be positive")
        if not self.covariances:
            raise InvalidConfigError("at least one regime covariance required")
        for k, cov in enumerate(self.covariances):
            cov = np.asarray(cov, dtype=float)
            if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
                raise InvalidConfigError(f"regime {k}: covariance must be square")
            if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-15):
                raise InvalidConfigError(f"regime {k}: covariance must be symmetric")
            if np.linalg.eigvalsh(cov)[0] <= 0:
                raise InvalidConfigError(f"regime {k}: covariance must be SPD")


def generate_synthetic(
    n_assets: int, T: int, seed: int, regime_spec: RegimeSpec
) -> ReturnsPanel:
    """Zero-mean Gaussian panel cycling through the regime covariances."""
    for cov in regime_spec.covariances:
        if np.asarray(cov).shape[0] != n_assets:
            raise InvalidConfigError("regime covariance size does not match n_assets")
    rng = np.random.default_rng(seed)
    chunks = []
    t = 0
    k = 0
    while t < T:
        length = min(regime_spec.segment_length, T - t)
        cov = np.asarray(regime_spec.covariances[k % len(regime_spec.covariances)])
        L = np.linalg.cholesky(cov)
        chunks.append(rng.standard_normal((length, n_assets)) @ L.T)
        t += length
        k += 1
    values = np.vstack(chunks)
    dates = [f"d{t:06d}" for t in range(T)]
    tickers = [f"A{i:02d}" for i in range(n_assets)]
    return ReturnsPanel(dates=dates, tickers=tickers, values=values)


def two_regime_universe(n_assets: int = 10) -> RegimeSpec:
    """Ten-asset, two-regime design used by the synthetic experiments.

    Half the assets are calm and half are volatile; the two regimes swap the
    groups' roles, so no asset is unconditionally calmer, and only forecasts
    that condition on the recent window can tilt toward the currently calm
    group.
    """
    if n_assets % 2 != 0:
        raise InvalidConfigError("two-regime universe needs an even asset count")
    half = n_assets // 2
    lo, hi = 0.007, 0.022
    rho_in, rho_x = 0.15, 0.05

    def build(vols):
        C = np.full((n_assets, n_assets), rho_x)
        C[:half, :half] = rho_in
        C[half:, half:] = rho_in
        np.fill_diagonal(C, 1.0)
        return C * np.outer(vols, vols)

    vols_a = np.array([lo] * half + [hi] * half)
    vols_b = np.array([hi] * half + [lo] * half)
    return RegimeSpec(covariances=[build(vols_a), build(vols_b)], segment_length=250)

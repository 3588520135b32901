"""Structural analyses of precision matrices, weights, and realized risk.

Contains the bidirectional block reordering of a precision matrix, the
exact diagonal/off-diagonal variance attribution with sign-region sums,
the volatility-rank precision metric, and trimmed weight envelopes.
All functions are pure and deterministic; ties break to the lowest
asset index everywhere.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError
from .reportio import write_report


@dataclass
class Permutation:
    """A bijective reordering plus advisory block boundaries."""

    pi: np.ndarray
    blocks: list

    def apply(self, a: np.ndarray) -> np.ndarray:
        return a[np.ix_(self.pi, self.pi)]


def _lowest_argmax(scores: np.ndarray, candidates: np.ndarray) -> int:
    # argmax returns the first hit, and candidates are ascending: lowest index wins ties
    return int(candidates[np.argmax(scores)])


def bbc_reorder(a: np.ndarray) -> Permutation:
    """Reorder indices so strongly coupled entries cluster into blocks.

    Seeds with the largest-magnitude off-diagonal pair at the front,
    anchors the most repelled index (smallest signed coupling to the
    first seed) at the back, then grows the two ends alternately: each
    step places the unplaced index with the highest mean coupling to the
    current front prefix (or back suffix).

    Block boundaries are advisory metadata: the cut after the position
    with the largest drop in within-prefix mean coupling.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"square matrix required, got {a.shape}")
    n = a.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 assets to reorder, got {n}")

    pi = np.full(n, -1, dtype=int)
    # seed pair: argmax over i<j of |a_ij|; row-major scan = lowest (i, j) on ties
    mag = np.abs(a).copy()
    mag[np.tril_indices(n)] = -np.inf
    i_star, j_star = np.unravel_index(np.argmax(mag), mag.shape)
    pi[0], pi[1] = int(i_star), int(j_star)
    placed = {int(i_star), int(j_star)}

    unplaced = np.array([k for k in range(n) if k not in placed])
    # antipodal anchor: signed minimum against pi[0], not magnitude
    anchor = int(unplaced[np.argmin(a[pi[0], unplaced])])
    pi[n - 1] = anchor
    placed.add(anchor)

    left, right = 2, n - 2
    while left <= right:
        unplaced = np.array([k for k in range(n) if k not in placed])
        pick = _lowest_argmax(a[unplaced][:, pi[:left]].mean(axis=1), unplaced)
        pi[left] = pick
        placed.add(pick)
        left += 1
        if left <= right:
            unplaced = np.array([k for k in range(n) if k not in placed])
            pick = _lowest_argmax(
                a[unplaced][:, pi[right + 1 :]].mean(axis=1), unplaced
            )
            pi[right] = pick
            placed.add(pick)
            right -= 1

    return Permutation(pi=pi, blocks=_detect_blocks(a, pi))


def _detect_blocks(a: np.ndarray, pi: np.ndarray) -> list:
    """Advisory cut: after the prefix whose mean pairwise coupling drops most."""
    n = len(pi)
    if n < 4:
        return []
    means = []
    for m in range(2, n + 1):
        sub = a[np.ix_(pi[:m], pi[:m])]
        off = sub[~np.eye(m, dtype=bool)]
        means.append(off.mean())
    drops = np.array(means[:-1]) - np.array(means[1:])
    return [int(np.argmax(drops)) + 2]


@dataclass
class AttributionReport:
    """Exact split of w'Sigma w into variance and covariance parts.

    The off-diagonal part is further split by the signs of the paired
    weights: both positive, mixed, both non-positive (zero weights count
    with the non-positive side).
    """

    diagonal_term: float
    offdiag_term: float
    region_pos_pos: float
    region_mixed: float
    region_neg_neg: float
    order: np.ndarray
    zero_crossing: int

    @property
    def total(self) -> float:
        return self.diagonal_term + self.offdiag_term


def attribution(w: np.ndarray, sigma: np.ndarray) -> AttributionReport:
    """Decompose portfolio variance w'Sigma w; terms partition it exactly."""
    w = np.asarray(w, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    n = w.shape[0]
    if w.ndim != 1 or sigma.shape != (n, n):
        raise ValueError(f"shape mismatch: w {w.shape}, sigma {sigma.shape}")
    contrib = np.outer(w, w) * sigma
    diagonal_term = float(np.trace(contrib))
    off = contrib - np.diag(np.diag(contrib))
    positive = w > 0
    pp = np.outer(positive, positive)
    nn = np.outer(~positive, ~positive)
    np.fill_diagonal(pp, False)
    np.fill_diagonal(nn, False)
    region_pos_pos = float(off[pp].sum())
    region_neg_neg = float(off[nn].sum())
    offdiag_term = float(off.sum())
    order = np.argsort(-w, kind="stable")
    return AttributionReport(
        diagonal_term=diagonal_term,
        offdiag_term=offdiag_term,
        region_pos_pos=region_pos_pos,
        region_mixed=offdiag_term - region_pos_pos - region_neg_neg,
        region_neg_neg=region_neg_neg,
        order=order,
        zero_crossing=int(positive.sum()),
    )


def volatility_rank_precision(train_panel, weights_history, k: int) -> float:
    """Overlap between the k calmest training assets and the k largest weights.

    Training calm = lowest per-asset std of raw returns over the whole
    training split.  Per rebalance, precision = |intersection| / k;
    the mean over rebalances is returned.  train_panel may be a
    ReturnsPanel or a bare (days, assets) array.
    """
    train_values = np.asarray(getattr(train_panel, "values", train_panel), dtype=float)
    weights_history = np.asarray(weights_history, dtype=float)
    n = train_values.shape[1]
    if weights_history.ndim != 2 or weights_history.shape[1] != n:
        raise ValueError("weights history must be (rebalances, assets)")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    calm = set(np.argsort(np.std(train_values, axis=0, ddof=1), kind="stable")[:k])
    hits = [
        len(calm & set(np.argsort(-w, kind="stable")[:k])) / k
        for w in weights_history
    ]
    return float(np.mean(hits))


@dataclass
class WeightEnvelope:
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    order: np.ndarray


def weight_distribution(
    weights_history, lower_pct: float = 2.5, upper_pct: float = 97.5
) -> WeightEnvelope:
    """Per-asset median and min/max after trimming the percentile tails.

    Entries strictly outside [lower_pct, upper_pct] per asset are dropped
    before taking the envelope, so a constant series keeps its point.
    The order field sorts assets by descending median.
    """
    if not 0 <= lower_pct < upper_pct <= 100:
        raise InvalidConfigError(
            f"percentiles must satisfy 0 <= lower < upper <= 100, "
            f"got ({lower_pct}, {upper_pct})"
        )
    weights_history = np.asarray(weights_history, dtype=float)
    if weights_history.ndim != 2 or weights_history.shape[0] == 0:
        raise InvalidConfigError("weights history must be a nonempty 2-d array")
    n = weights_history.shape[1]
    median = np.median(weights_history, axis=0)
    lower = np.empty(n)
    upper = np.empty(n)
    for j in range(n):
        col = weights_history[:, j]
        lo_cut, hi_cut = np.percentile(col, [lower_pct, upper_pct])
        kept = col[(col >= lo_cut) & (col <= hi_cut)]
        if kept.size == 0:
            # interpolated cuts can exclude every point of a tiny column
            kept = col
        lower[j] = kept.min()
        upper[j] = kept.max()
    return WeightEnvelope(
        median=median,
        lower=lower,
        upper=upper,
        order=np.argsort(-median, kind="stable"),
    )


def write_precision_reordered(matrix, perm: Permutation, tickers, path) -> None:
    reordered = perm.apply(np.asarray(matrix, dtype=float))
    names = [tickers[i] for i in perm.pi]
    rows = [[names[i], *[float(x) for x in reordered[i]]] for i in range(len(names))]
    write_report(path, "precision_reordered.v1", ["ticker", *names], rows)


def write_permutation(perm: Permutation, tickers, path) -> None:
    boundary = set(perm.blocks)
    rows = [
        [pos, int(idx), tickers[idx], 1 if pos in boundary else 0]
        for pos, idx in enumerate(perm.pi)
    ]
    write_report(
        path, "permutation.v1", ["position", "asset_index", "ticker", "block_start"], rows
    )


def write_attribution_regions(report: AttributionReport, path) -> None:
    rows = [
        ["diagonal", report.diagonal_term],
        ["offdiag", report.offdiag_term],
        ["pos_pos", report.region_pos_pos],
        ["mixed", report.region_mixed],
        ["neg_neg", report.region_neg_neg],
        ["total", report.total],
        ["zero_crossing", float(report.zero_crossing)],
    ]
    write_report(path, "attribution_regions.v1", ["term", "value"], rows)


def write_rank_precision(entries, path) -> None:
    """entries: iterable of (strategy, k, precision)."""
    write_report(
        path,
        "rank_precision.v1",
        ["strategy", "k", "precision"],
        [[s, k, float(p)] for s, k, p in entries],
    )


def write_weight_envelope(env: WeightEnvelope, tickers, path) -> None:
    rank = np.empty_like(env.order)
    rank[env.order] = np.arange(len(env.order))
    rows = [
        [tickers[j], float(env.median[j]), float(env.lower[j]), float(env.upper[j]), int(rank[j])]
        for j in range(len(tickers))
    ]
    write_report(
        path, "weight_envelope.v1", ["ticker", "median", "lower", "upper", "rank"], rows
    )

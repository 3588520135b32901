"""Linear trend/residual covariance forecaster with a hand-derived backward.

The model decomposes each input window into a centered-moving-average trend
and its residual, applies one shared per-asset linear map to each component,
sums the two feature vectors per asset, concatenates assets, and maps the
result to the ``N (N + 1) / 2`` entries of a lower-triangular matrix ``L``
(row-major fill).  The forecast is ``Sigma = L L'``, symmetric PSD by
construction.

All gradients are exact and hand-derived; there is no autodiff anywhere in
the library.  Checkpoints use a custom length-prefixed binary layout because
zip-based containers embed timestamps and would break byte-identical
reproducibility.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, InvalidConfigError

H_DIM_DEFAULT = 128
HEAD_INIT_GAIN = 0.01
_MAGIC = b"MVCKPT01"


def kernel_size(delta_in: int) -> int:
    """Moving-average window: max{5, min{delta_in // 3, 50}}."""
    return max(5, min(delta_in // 3, 50))


@dataclass
class ForecasterParams:
    trend_w: np.ndarray  # h_dim x delta_in
    trend_b: np.ndarray  # h_dim
    resid_w: np.ndarray  # h_dim x delta_in
    resid_b: np.ndarray  # h_dim
    head_w: np.ndarray  # M x (n_assets * h_dim)
    head_b: np.ndarray  # M
    kernel: int
    n_assets: int
    delta_in: int
    h_dim: int

    ARRAY_FIELDS = ("trend_w", "trend_b", "resid_w", "resid_b", "head_w", "head_b")
    INT_FIELDS = ("kernel", "n_assets", "delta_in", "h_dim")

    def copy(self) -> "ForecasterParams":
        return ForecasterParams(
            *(getattr(self, f).copy() for f in self.ARRAY_FIELDS),
            *(getattr(self, f) for f in self.INT_FIELDS),
        )

    def arrays(self) -> dict:
        return {f: getattr(self, f) for f in self.ARRAY_FIELDS}


@dataclass
class ActivationCache:
    x: np.ndarray
    trend: np.ndarray
    resid: np.ndarray
    z: np.ndarray
    L: np.ndarray


def tril_order(n: int):
    """Row-major lower-triangle index pair arrays (L11, L21, L22, ...)."""
    return np.tril_indices(n)


def decompose(x: np.ndarray, kernel: int):
    """Centered moving-average trend with edge replication, plus residual.

    Accepts a single window (delta_in x N) or a batch (B x delta_in x N).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if kernel < 1:
        raise InvalidConfigError(f"kernel must be >= 1, got {kernel}")
    if kernel > x.shape[1]:
        raise InvalidConfigError(
            f"kernel {kernel} exceeds window length {x.shape[1]}"
        )
    pad_front = (kernel - 1) // 2
    pad_back = kernel // 2
    xp = np.concatenate(
        [np.repeat(x[:, :1], pad_front, axis=1), x, np.repeat(x[:, -1:], pad_back, axis=1)],
        axis=1,
    )
    csum = np.cumsum(np.concatenate([np.zeros_like(xp[:, :1]), xp], axis=1), axis=1)
    trend = (csum[:, kernel:] - csum[:, :-kernel]) / kernel
    resid = x - trend
    if single:
        return trend[0], resid[0]
    return trend, resid


def init_params(
    seed: int,
    delta_in: int,
    n_assets: int,
    h_dim: int = H_DIM_DEFAULT,
    init_scale: float = 1.0,
) -> ForecasterParams:
    """Seeded init: uniform 1/sqrt(fan_in) weights, identity-biased head.

    The head weights carry an extra small gain so the initial ``L`` is close
    to ``init_scale * I`` on any input, keeping the first portfolio solves
    well-conditioned.
    """
    if min(delta_in, n_assets, h_dim) < 1:
        raise InvalidConfigError("dimensions must be positive")
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in, gain=1.0):
        return gain * rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan_in)

    m = n_assets * (n_assets + 1) // 2
    trend_w = uniform((h_dim, delta_in), delta_in)
    resid_w = uniform((h_dim, delta_in), delta_in)
    head_w = uniform((m, n_assets * h_dim), n_assets * h_dim, gain=HEAD_INIT_GAIN)
    head_b = np.zeros(m)
    rows, cols = tril_order(n_assets)
    head_b[rows == cols] = init_scale
    return ForecasterParams(
        trend_w=trend_w,
        trend_b=np.zeros(h_dim),
        resid_w=resid_w,
        resid_b=np.zeros(h_dim),
        head_w=head_w,
        head_b=head_b,
        kernel=kernel_size(delta_in),
        n_assets=n_assets,
        delta_in=delta_in,
        h_dim=h_dim,
    )


def forward_batch(params: ForecasterParams, x: np.ndarray):
    """Batched forecast: (B, delta_in, N) -> covariances (B, N, N) plus cache."""
    x = np.asarray(x, dtype=float)
    B, d_in, n = x.shape
    if d_in != params.delta_in or n != params.n_assets:
        raise ValueError(
            f"input shape {x.shape[1:]} does not match params "
            f"({params.delta_in}, {params.n_assets})"
        )
    trend, resid = decompose(x, params.kernel)
    feat = (
        np.einsum("hd,bdn->bnh", params.trend_w, trend)
        + params.trend_b
        + np.einsum("hd,bdn->bnh", params.resid_w, resid)
        + params.resid_b
    )
    z = feat.reshape(B, n * params.h_dim)
    v = z @ params.head_w.T + params.head_b
    rows, cols = tril_order(n)
    L = np.zeros((B, n, n))
    L[:, rows, cols] = v
    sigma = L @ np.transpose(L, (0, 2, 1))
    return sigma, ActivationCache(x=x, trend=trend, resid=resid, z=z, L=L)


def forward(params: ForecasterParams, x: np.ndarray):
    """Single-window forecast: (delta_in, N) -> (Sigma, L, cache)."""
    sigma, cache = forward_batch(params, np.asarray(x, dtype=float)[None])
    return sigma[0], cache.L[0], cache


def backward_batch(params: ForecasterParams, cache: ActivationCache, upstream: np.ndarray) -> dict:
    """Mean parameter gradient over the batch for upstream dLoss/dSigma.

    ``grad_L = (G + G') L`` propagated through the head and the two shared
    per-asset maps by linear-map transposition.
    """
    G = np.asarray(upstream, dtype=float)
    if G.ndim == 2:
        G = G[None]
    B, n = G.shape[0], params.n_assets
    if cache.z.shape[0] != B:
        raise ValueError("cache/batch size mismatch")
    if cache.z.shape[1] != params.n_assets * params.h_dim:
        raise ValueError("cache does not match params dimensions")
    gL = (G + np.transpose(G, (0, 2, 1))) @ cache.L
    rows, cols = tril_order(n)
    gv = gL[:, rows, cols]
    gz = gv @ params.head_w
    gfeat = gz.reshape(B, n, params.h_dim)
    gb_shared = gfeat.sum(axis=1).mean(axis=0)
    return {
        "head_w": gv.T @ cache.z / B,
        "head_b": gv.mean(axis=0),
        "trend_w": np.einsum("bnh,bdn->hd", gfeat, cache.trend) / B,
        "trend_b": gb_shared,
        "resid_w": np.einsum("bnh,bdn->hd", gfeat, cache.resid) / B,
        "resid_b": gb_shared.copy(),
    }


def backward(params: ForecasterParams, cache: ActivationCache, upstream: np.ndarray) -> dict:
    """Exact single-sample parameter gradient (batch of one)."""
    return backward_batch(params, cache, upstream)


def save_checkpoint(path, params: ForecasterParams, meta: dict | None = None) -> None:
    """Write a deterministic binary checkpoint (bit-exact round trip)."""
    fields = []
    payload = b""
    for name in ForecasterParams.ARRAY_FIELDS:
        arr = np.ascontiguousarray(getattr(params, name), dtype=np.float64)
        fields.append({"name": name, "shape": list(arr.shape)})
        payload += arr.tobytes()
    header = {
        "fields": fields,
        "ints": {f: int(getattr(params, f)) for f in ForecasterParams.INT_FIELDS},
        "meta": meta or {},
        "version": 1,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(blob).to_bytes(8, "big"))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path):
    """Read a checkpoint; returns (params, meta)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no such checkpoint: {path}")
    raw = path.read_bytes()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    off = len(_MAGIC)
    blob_len = int.from_bytes(raw[off : off + 8], "big")
    off += 8
    try:
        header = json.loads(raw[off : off + blob_len].decode())
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    off += blob_len
    arrays = {}
    for field in header["fields"]:
        shape = tuple(field["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload")
        arrays[field["name"]] = np.frombuffer(
            raw[off : off + nbytes], dtype=np.float64
        ).reshape(shape).copy()
        off += nbytes
    if off != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")
    try:
        params = ForecasterParams(
            **arrays, **{k: int(v) for k, v in header["ints"].items()}
        )
    except TypeError as exc:
        raise CheckpointError(f"{path}: missing fields") from exc
    return params, header.get("meta", {})

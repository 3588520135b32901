"""Shared generators for the test suite."""
import numpy as np
import pytest


def spd(rng, n, lo=0.5, hi=2.0):
    """Well-conditioned SPD matrix: random rotation, eigenvalues in [lo, hi]."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.uniform(lo, hi, size=n)
    return (q * lam) @ q.T


def symmetric(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) * scale
    return (a + a.T) / 2.0


def rel_err(got, want, floor=1e-300):
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    denom = max(np.linalg.norm(got), np.linalg.norm(want), floor)
    return np.linalg.norm(got - want) / denom


@pytest.fixture
def rng():
    return np.random.default_rng(20260817)

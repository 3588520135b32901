"""Compiled and pure-NumPy backends must agree to reduction-order noise."""
import numpy as np
import pytest

from conftest import spd
from minvar import _core_py
from minvar import core
from minvar.gmvp import grad_loss_wrt_sigma, solve_gmvp_full

cython_core = pytest.importorskip(
    "minvar._core", reason="compiled backend not built on this platform"
)


def batch_with_degenerate(rng, B=12, n=5):
    sigma = np.stack([spd(rng, n) for _ in range(B)])
    sigma[3] = 0.0  # no positive spectrum: must be flagged, not raised
    return sigma


class TestBackendParity:
    def test_batch_gmvp_agrees(self, rng):
        sigma = batch_with_degenerate(rng)
        w_p, P_p, D_p, ok_p = _core_py.batch_gmvp(sigma, 1e-6, None)
        w_c, P_c, D_c, ok_c = cython_core.batch_gmvp(sigma, 1e-6, None)
        np.testing.assert_array_equal(ok_p, ok_c)
        assert not ok_p[3] and ok_p.sum() == 11
        np.testing.assert_allclose(w_c, w_p, atol=1e-12)
        np.testing.assert_allclose(P_c, P_p, atol=1e-12 * np.abs(P_p).max())
        np.testing.assert_allclose(D_c, D_p, rtol=1e-12, atol=1e-300)

    def test_batch_gmvp_agrees_with_fixed_ridge(self, rng):
        sigma = np.stack([spd(rng, 4) for _ in range(6)])
        for ridge in (0.0, 1e-6):
            w_p, P_p, D_p, ok_p = _core_py.batch_gmvp(sigma, 1e-6, ridge)
            w_c, P_c, D_c, ok_c = cython_core.batch_gmvp(sigma, 1e-6, ridge)
            np.testing.assert_array_equal(ok_p, ok_c)
            np.testing.assert_allclose(w_c, w_p, atol=1e-12)

    def test_batch_quadform_agrees(self, rng):
        sigma = np.stack([spd(rng, 6) for _ in range(10)])
        w = rng.standard_normal((10, 6))
        got_c = cython_core.batch_quadform(w, sigma)
        got_p = _core_py.batch_quadform(w, sigma)
        want = np.array([wi @ si @ wi for wi, si in zip(w, sigma)])
        np.testing.assert_allclose(got_p, want, rtol=1e-12)
        np.testing.assert_allclose(got_c, want, rtol=1e-12)

    def test_batch_decision_grad_agrees(self, rng):
        sigma = np.stack([spd(rng, 5) for _ in range(8)])
        truth = np.stack([spd(rng, 5) for _ in range(8)])
        w, P, D, ok = _core_py.batch_gmvp(sigma, 1e-6, None)
        assert ok.all()
        got_p = _core_py.batch_decision_grad(w, P, D, truth)
        got_c = cython_core.batch_decision_grad(w, P, D, truth)
        scale = np.abs(got_p).max()
        np.testing.assert_allclose(got_c, got_p, atol=1e-12 * scale)


class TestAgainstSingleInstanceRoute:
    def test_batch_gmvp_matches_solve_gmvp_full(self, rng):
        sigma = np.stack([spd(rng, 5) for _ in range(10)])
        w, P, D, ok = core.batch_gmvp(sigma, 1e-6, None)
        assert ok.all()
        for i in range(10):
            sol = solve_gmvp_full(sigma[i], 1e-6, None)
            np.testing.assert_allclose(w[i], sol.w, atol=1e-12)
            np.testing.assert_allclose(P[i], sol.precision, atol=1e-10 * np.abs(sol.precision).max())
            assert D[i] == pytest.approx(sol.budget, rel=1e-12)

    def test_batch_decision_grad_matches_closed_form(self, rng):
        sigma = np.stack([spd(rng, 4) for _ in range(8)])
        truth = np.stack([spd(rng, 4) for _ in range(8)])
        w, P, D, ok = core.batch_gmvp(sigma, 1e-6, 0.0)
        G = core.batch_decision_grad(w, P, D, truth)
        for i in range(8):
            want = grad_loss_wrt_sigma(sigma[i], truth[i], ridge=0.0)
            np.testing.assert_allclose(G[i], want, atol=1e-10 * np.abs(want).max())

    def test_dispatcher_exposes_a_named_backend(self):
        assert core.BACKEND_NAME in ("python", "cython")
        assert core.batch_gmvp is not None

"""Trend/residual decomposition, the LL' head, its backward pass, checkpoints."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minvar.errors import CheckpointError, InvalidConfigError
from minvar.forecaster import (
    ForecasterParams,
    backward,
    backward_batch,
    decompose,
    forward,
    forward_batch,
    init_params,
    kernel_size,
    load_checkpoint,
    save_checkpoint,
    tril_order,
)


def small_params(seed=0, delta_in=9, n_assets=3, h_dim=6, init_scale=0.5):
    return init_params(seed, delta_in, n_assets, h_dim, init_scale)


class TestKernelSize:
    def test_formula(self):
        assert kernel_size(21) == 7
        assert kernel_size(5) == 5
        assert kernel_size(63) == 21
        assert kernel_size(300) == 50


class TestDecompose:
    def test_constant_series(self):
        x = np.full((12, 3), 1.7)
        trend, resid = decompose(x, 5)
        np.testing.assert_allclose(trend, x, rtol=1e-15)
        np.testing.assert_allclose(resid, 0.0, atol=1e-15)

    def test_kernel_one_is_identity(self, rng):
        # cumsum arithmetic leaves 1-ulp noise, so equality up to atol
        x = rng.standard_normal((8, 2))
        trend, resid = decompose(x, 1)
        np.testing.assert_allclose(trend, x, rtol=0, atol=1e-14)
        np.testing.assert_allclose(resid, 0.0, atol=1e-14)

    def test_linear_ramp_hand_computed(self):
        x = np.arange(1.0, 11.0)[:, None]
        trend, _ = decompose(x, 3)
        # replicated edges: mean(1,1,2) and mean(9,10,10); interior is the ramp
        assert trend[0, 0] == pytest.approx(4.0 / 3.0)
        np.testing.assert_allclose(trend[1:9, 0], x[1:9, 0], rtol=1e-14)
        assert trend[9, 0] == pytest.approx(29.0 / 3.0)

    @settings(max_examples=30, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        rows=st.integers(2, 30),
        kernel=st.integers(1, 30),
    )
    def test_reconstructs_exactly(self, seed, rows, kernel):
        if kernel > rows:
            kernel = rows
        x = np.random.default_rng(seed).standard_normal((rows, 3))
        trend, resid = decompose(x, kernel)
        np.testing.assert_allclose(trend + resid, x, atol=1e-15)

    def test_kernel_larger_than_window(self, rng):
        with pytest.raises(InvalidConfigError):
            decompose(rng.standard_normal((4, 2)), 5)
        with pytest.raises(InvalidConfigError):
            decompose(rng.standard_normal((4, 2)), 0)


class TestInitParams:
    def test_deterministic(self):
        a, b = small_params(seed=3), small_params(seed=3)
        for name in ForecasterParams.ARRAY_FIELDS:
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_bias_only_path_gives_scaled_identity(self, rng):
        params = small_params(init_scale=0.3)
        params.trend_w[:] = 0
        params.resid_w[:] = 0
        params.head_w[:] = 0
        x = rng.standard_normal((9, 3))
        sigma, L, _ = forward(params, x)
        np.testing.assert_allclose(L, 0.3 * np.eye(3), atol=1e-15)
        np.testing.assert_allclose(sigma, 0.09 * np.eye(3), atol=1e-15)

    def test_fan_in_scaling(self):
        # doubling the input length should halve the weight variance
        narrow = init_params(0, 20, 3, h_dim=128)
        wide = init_params(0, 40, 3, h_dim=128)
        ratio = narrow.trend_w.var() / wide.trend_w.var()
        assert 1.7 < ratio < 2.3

    def test_dimension_validation(self):
        with pytest.raises(InvalidConfigError):
            init_params(0, 0, 3)


class TestForward:
    def test_zero_params_zero_output(self, rng):
        params = small_params()
        for name in ForecasterParams.ARRAY_FIELDS:
            getattr(params, name)[:] = 0
        sigma, L, _ = forward(params, rng.standard_normal((9, 3)))
        assert not sigma.any() and not L.any()

    def test_output_is_symmetric_psd(self, rng):
        params = small_params(seed=11)
        sigma, L, _ = forward(params, rng.standard_normal((9, 3)))
        np.testing.assert_allclose(sigma, sigma.T, atol=1e-15)
        assert np.linalg.eigvalsh(sigma)[0] >= -1e-12

    def test_factor_is_lower_triangular(self, rng):
        params = small_params(seed=2)
        _, L, _ = forward(params, rng.standard_normal((9, 3)))
        assert np.array_equal(np.triu(L, 1), np.zeros((3, 3)))

    def test_batch_matches_singles(self, rng):
        params = small_params(seed=5)
        x = rng.standard_normal((4, 9, 3))
        batch_sigma, _ = forward_batch(params, x)
        for i in range(4):
            single, _, _ = forward(params, x[i])
            np.testing.assert_allclose(batch_sigma[i], single, rtol=1e-14)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            forward(small_params(), rng.standard_normal((9, 5)))

    def test_tril_order_is_row_major(self):
        rows, cols = tril_order(3)
        assert list(zip(rows.tolist(), cols.tolist())) == [
            (0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2),
        ]


class TestBackward:
    def test_matches_finite_differences_on_every_parameter(self, rng):
        params = small_params(seed=7)
        x = rng.standard_normal((9, 3))
        W = rng.standard_normal((3, 3))  # asymmetric probe direction

        def probe(p):
            sigma, _, _ = forward(p, x)
            return float(np.sum(sigma * W))

        _, _, cache = forward(params, x)
        grads = backward(params, cache, W)
        worst = 0.0
        for name in ForecasterParams.ARRAY_FIELDS:
            g = grads[name]
            gmax = max(np.abs(g).max(), 1e-12)
            arr = getattr(params, name)
            for idx in np.ndindex(arr.shape):
                # h ~ cbrt(eps): keeps truncation and roundoff both < 1e-7 rel
                h = 1e-5 * max(1.0, abs(arr[idx]))
                orig = arr[idx]
                arr[idx] = orig + h
                up = probe(params)
                arr[idx] = orig - h
                down = probe(params)
                arr[idx] = orig
                fd = (up - down) / (2 * h)
                rel = abs(g[idx] - fd) / max(abs(g[idx]), abs(fd), 1e-8 * gmax)
                worst = max(worst, rel)
        assert worst < 1e-6

    def test_upstream_symmetric_part_is_all_that_matters(self, rng):
        params = small_params(seed=1)
        x = rng.standard_normal((9, 3))
        _, _, cache = forward(params, x)
        G = rng.standard_normal((3, 3))
        sym_grads = backward(params, cache, (G + G.T) / 2)
        asym_grads = backward(params, cache, G)
        for name in sym_grads:
            np.testing.assert_allclose(asym_grads[name], sym_grads[name], atol=1e-15)

    def test_zero_upstream_zero_grads(self, rng):
        params = small_params()
        _, _, cache = forward(params, rng.standard_normal((9, 3)))
        grads = backward(params, cache, np.zeros((3, 3)))
        assert all(not g.any() for g in grads.values())

    def test_batch_gradient_is_mean_of_singles(self, rng):
        params = small_params(seed=4)
        x = rng.standard_normal((3, 9, 3))
        G = rng.standard_normal((3, 3, 3))
        _, cache = forward_batch(params, x)
        batch = backward_batch(params, cache, G)
        singles = []
        for i in range(3):
            _, _, c = forward(params, x[i])
            singles.append(backward(params, c, G[i]))
        for name in batch:
            mean = np.mean([s[name] for s in singles], axis=0)
            np.testing.assert_allclose(batch[name], mean, rtol=1e-12, atol=1e-15)

    def test_cache_mismatch(self, rng):
        params = small_params()
        _, cache = forward_batch(params, rng.standard_normal((2, 9, 3)))
        with pytest.raises(ValueError):
            backward_batch(params, cache, np.zeros((3, 3, 3)))


class TestCheckpoint:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        params = small_params(seed=9)
        meta = {"objective": "dfl", "seed": 9}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, meta)
        loaded, got_meta = load_checkpoint(path)
        assert got_meta == meta
        for name in ForecasterParams.ARRAY_FIELDS:
            assert np.array_equal(getattr(loaded, name), getattr(params, name))
        for name in ForecasterParams.INT_FIELDS:
            assert getattr(loaded, name) == getattr(params, name)

    def test_save_is_deterministic(self, tmp_path):
        params = small_params(seed=9)
        save_checkpoint(tmp_path / "a.ckpt", params, {"k": 1})
        save_checkpoint(tmp_path / "b.ckpt", params, {"k": 1})
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="no such"):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, small_params())
        raw = p.read_bytes()
        p.write_bytes(raw[: len(raw) - 16])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(p)

    def test_trailing_bytes(self, tmp_path):
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, small_params())
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(p)

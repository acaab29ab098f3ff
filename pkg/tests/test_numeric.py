import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikenas.numeric import (
    AdamState,
    BatchNormParams,
    ConvParams,
    DimensionError,
    NonFiniteError,
    adam_step,
    avgpool2d,
    avgpool2d_backward,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    linear_backward,
    linear_forward,
    maxpool2d,
    maxpool2d_backward,
)

from conftest import numeric_grad, rel_err


class TestConv:
    def test_zero_input_gives_zero(self, rng):
        p = ConvParams(rng.standard_normal((1, 1, 3, 3)), np.zeros(1), padding=1)
        assert np.all(conv2d_forward(np.zeros((1, 1, 3, 3)), p) == 0)

    def test_scalar(self):
        p = ConvParams(np.array([[[[3.0]]]]), np.array([0.5]))
        x = np.array([[[[2.0]]]])
        np.testing.assert_allclose(conv2d_forward(x, p), [[[[6.5]]]])
        gx, gw, gb = conv2d_backward(x, p, np.ones((1, 1, 1, 1)))
        assert gx.item() == 3.0 and gw.item() == 2.0 and gb.item() == 1.0

    def test_delta_kernel_is_identity(self, rng):
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1
        x = rng.standard_normal((1, 1, 3, 3))
        np.testing.assert_array_equal(conv2d_forward(x, ConvParams(w, padding=1)), x)

    def test_zero_grad_out(self, rng):
        x = rng.standard_normal((2, 2, 4, 4))
        p = ConvParams(rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3), padding=1)
        gx, gw, gb = conv2d_backward(x, p, np.zeros((2, 3, 4, 4)))
        assert not gx.any() and not gw.any() and not gb.any()

    @pytest.mark.parametrize("k,stride,groups,c_in,c_out", [
        (3, 1, 1, 2, 3), (5, 1, 1, 2, 2), (3, 2, 1, 2, 4), (1, 1, 1, 3, 2), (3, 1, 2, 2, 4), (3, 1, 4, 4, 4),
    ])
    def test_backward_matches_finite_differences(self, rng, k, stride, groups, c_in, c_out):
        x = rng.standard_normal((2, c_in, 5, 5))
        p = ConvParams(rng.standard_normal((c_out, c_in // groups, k, k)), rng.standard_normal(c_out),
                       stride=stride, padding=(k - 1) // 2, groups=groups)
        go = rng.standard_normal(conv2d_forward(x, p).shape)
        loss = lambda: float(np.sum(conv2d_forward(x, p) * go))
        gx, gw, gb = conv2d_backward(x, p, go)
        assert rel_err(gx, numeric_grad(loss, x, 1e-5)) < 1e-4
        assert rel_err(gw, numeric_grad(loss, p.weight, 1e-5)) < 1e-4
        assert rel_err(gb, numeric_grad(loss, p.bias, 1e-5)) < 1e-4

    def test_cached_cols_give_same_grads(self, rng):
        x = rng.standard_normal((2, 2, 4, 4))
        p = ConvParams(rng.standard_normal((2, 2, 3, 3)), padding=1)
        out, cols = conv2d_forward(x, p, return_cols=True)
        go = rng.standard_normal(out.shape)
        a = conv2d_backward(x, p, go)
        b = conv2d_backward(x, p, go, cols=cols)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
        assert a[2] is None

    def test_linearity(self, rng):
        p = ConvParams(rng.standard_normal((3, 2, 3, 3)), padding=1)
        x, y = rng.standard_normal((2, 2, 2, 6, 6))
        lhs = conv2d_forward(1.5 * x - 0.5 * y, p)
        rhs = 1.5 * conv2d_forward(x, p) - 0.5 * conv2d_forward(y, p)
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_shape_errors(self, rng):
        p = ConvParams(rng.standard_normal((2, 3, 3, 3)), padding=1)
        with pytest.raises(DimensionError):
            conv2d_forward(np.zeros((1, 2, 4, 4)), p)
        with pytest.raises(DimensionError):
            conv2d_backward(np.zeros((1, 3, 4, 4)), p, np.zeros((1, 2, 3, 3)))

    def test_deterministic(self, rng):
        x = rng.standard_normal((2, 2, 6, 6)).astype(np.float32)
        p = ConvParams(rng.standard_normal((3, 2, 3, 3)).astype(np.float32), padding=1)
        assert conv2d_forward(x, p).tobytes() == conv2d_forward(x.copy(), p).tobytes()


class TestPooling:
    def test_max_windows(self):
        assert maxpool2d(np.zeros((1, 1, 2, 2)))[0].item() == 0
        assert maxpool2d(np.array([[[[0.0, 1.0], [0.0, 0.0]]]]))[0].item() == 1

    def test_checkerboard(self):
        board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)[None, None]
        np.testing.assert_array_equal(maxpool2d(board)[0], np.ones((1, 1, 2, 2)))

    def test_avg_windows(self):
        assert avgpool2d(np.ones((1, 1, 2, 2))).item() == 1.0
        assert avgpool2d(np.array([[[[0.0, 1.0], [0.0, 0.0]]]])).item() == 0.25
        assert not avgpool2d(np.zeros((1, 2, 4, 4))).any()

    def test_odd_dims_rejected(self):
        with pytest.raises(DimensionError):
            maxpool2d(np.zeros((1, 1, 3, 4)))
        with pytest.raises(DimensionError):
            avgpool2d(np.zeros((1, 1, 4, 5)))

    def test_tie_goes_to_first(self):
        _, idx = maxpool2d(np.ones((1, 1, 2, 2)))
        g = maxpool2d_backward(np.ones((1, 1, 1, 1)), idx)
        np.testing.assert_array_equal(g[0, 0], [[1, 0], [0, 0]])

    def test_backward_finite_differences(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        go = rng.standard_normal((2, 3, 2, 2))
        out, idx = maxpool2d(x)
        assert rel_err(maxpool2d_backward(go, idx), numeric_grad(lambda: float(np.sum(maxpool2d(x)[0] * go)), x)) < 1e-4
        assert rel_err(avgpool2d_backward(go), numeric_grad(lambda: float(np.sum(avgpool2d(x) * go)), x)) < 1e-4

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1))
    def test_binary_in_binary_out(self, h2, w2, seed):
        x = (np.random.default_rng(seed).random((2, 2, 2 * h2, 2 * w2)) < 0.3).astype(np.float32)
        out = maxpool2d(x)[0]
        assert set(np.unique(out)) <= {0.0, 1.0}
        assert set(np.unique(avgpool2d(x))) <= {0.0, 0.25, 0.5, 0.75, 1.0}


class TestLinear:
    def test_finite_differences(self, rng):
        x = rng.standard_normal((3, 5))
        w = rng.standard_normal((4, 5))
        b = rng.standard_normal(4)
        go = rng.standard_normal((3, 4))
        loss = lambda: float(np.sum(linear_forward(x, w, b) * go))
        gx, gw, gb = linear_backward(x, w, go)
        assert rel_err(gx, numeric_grad(loss, x)) < 1e-4
        assert rel_err(gw, numeric_grad(loss, w)) < 1e-4
        assert rel_err(gb, numeric_grad(loss, b)) < 1e-4


class TestBatchNorm:
    def test_constant_channel_maps_to_zero(self):
        x = np.ones((4, 2, 3, 3)) * np.array([1.0, -3.0])[None, :, None, None]
        y, _ = batchnorm_forward(x, BatchNormParams.create(2, np.float64))
        assert np.max(np.abs(y)) < 1e-6

    def test_zero_gamma_outputs_beta(self, rng):
        p = BatchNormParams.create(3, np.float64)
        p.gamma[:] = 0
        p.beta[:] = [1.0, 2.0, 3.0]
        y, _ = batchnorm_forward(rng.standard_normal((4, 3, 2, 2)), p)
        np.testing.assert_allclose(y, np.broadcast_to(p.beta[None, :, None, None], y.shape))

    def test_already_normalized(self):
        p = BatchNormParams.create(1, np.float64, eps=1e-12)
        y, _ = batchnorm_forward(np.array([[-1.0], [1.0]]), p)
        np.testing.assert_allclose(y, [[-1.0], [1.0]], atol=1e-9)

    def test_running_stats_unbiased(self):
        p = BatchNormParams.create(1, np.float64, momentum=1.0)
        batchnorm_forward(np.array([[0.0], [2.0]]), p)
        assert p.running_mean.item() == 1.0 and p.running_var.item() == 2.0

    def test_eval_uses_running_stats(self):
        p = BatchNormParams.create(1, np.float64)
        p.running_mean[:] = 2.0
        p.running_var[:] = 4.0 - p.eps
        y, _ = batchnorm_forward(np.array([[4.0]]), p, training=False)
        assert y.item() == pytest.approx(1.0)

    def test_empty_batch(self):
        with pytest.raises(DimensionError):
            batchnorm_forward(np.zeros((0, 2)), BatchNormParams.create(2))

    @pytest.mark.parametrize("training", [True, False])
    @pytest.mark.parametrize("shape", [(5, 3), (3, 2, 3, 3), (2, 3, 2, 2, 2)])
    def test_finite_differences(self, rng, shape, training):
        x = rng.standard_normal(shape)
        p = BatchNormParams.create(shape[1], np.float64)
        p.gamma[:] = rng.standard_normal(shape[1])
        p.beta[:] = rng.standard_normal(shape[1])
        p.running_var[:] = rng.random(shape[1]) + 0.5
        go = rng.standard_normal(shape)
        snap = (p.running_mean.copy(), p.running_var.copy())

        def loss():
            # keep running statistics fixed while probing
            p.running_mean[:], p.running_var[:] = snap
            return float(np.sum(batchnorm_forward(x, p, training)[0] * go))

        _, cache = batchnorm_forward(x, p, training)
        gx, gg, gb = batchnorm_backward(go, p, cache)
        assert rel_err(gx, numeric_grad(loss, x)) < 1e-4
        assert rel_err(gg, numeric_grad(loss, p.gamma)) < 1e-4
        assert rel_err(gb, numeric_grad(loss, p.beta)) < 1e-4


class TestAdam:
    def test_zero_gradient_first_step(self):
        p = {"w": np.array([1.0, 2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState())
        np.testing.assert_array_equal(p["w"], [1.0, 2.0])

    def test_first_step_moves_by_lr(self):
        p = {"w": np.array([0.0])}
        adam_step(p, {"w": np.array([1.0])}, AdamState())
        assert p["w"].item() == pytest.approx(-0.001, rel=1e-6)

    def test_monotone(self):
        p = {"w": np.array([0.0])}
        s = AdamState()
        adam_step(p, {"w": np.array([1.0])}, s)
        first = p["w"].item()
        adam_step(p, {"w": np.array([1.0])}, s)
        assert p["w"].item() < first < 0

    def test_only_given_params_step(self):
        p = {"a": np.zeros(1), "b": np.zeros(1)}
        s = AdamState()
        adam_step(p, {"a": np.ones(1)}, s)
        adam_step(p, {"b": np.ones(1)}, s)
        # b's first update is bias-corrected as a first step
        assert p["b"].item() == pytest.approx(-0.001, rel=1e-6)
        assert s.step == {"a": 1, "b": 1}

    def test_non_finite_names_parameter(self):
        with pytest.raises(NonFiniteError, match="conv.weight"):
            adam_step({"conv.weight": np.zeros(2)}, {"conv.weight": np.array([np.nan, 0.0])}, AdamState())

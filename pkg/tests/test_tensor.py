"""Tensor-engine tests: primitive semantics against independent oracles,
finite-difference gradient checks, and the engine's state contracts."""

import numpy as np
import pytest

from minenetcd import ops
from minenetcd.errors import ShapeError, StateError
from minenetcd.gradcheck import check_gradients
from minenetcd.tensor import (Tensor, activation, concat, no_grad, relu,
                              sigmoid, silu)


def t64(arr, grad=True):
    return Tensor(np.asarray(arr), requires_grad=grad, dtype=np.float64)


# ----------------------------------------------------------------------
# convolution

def conv2d_naive(x, w, b, stride, padding):
    """Nested-loop direct convolution oracle (no im2col, no BLAS)."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow), dtype=np.float64)
    for ni in range(n):
        for co in range(cout):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (xp[ni, ci, oy * stride + i,
                                           ox * stride + j]
                                        * w[co, ci, i, j])
                    out[ni, co, oy, ox] = acc + (b[co] if b is not None else 0)
    return out


class TestConv2d:
    def test_scalar_scaling(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.full((1, 1, 1, 1), 2.0))
        b = Tensor(np.zeros(1))
        out = ops.conv2d(x, w, b)
        assert out.shape == (1, 1, 3, 3)
        assert np.array_equal(out.data, np.full((1, 1, 3, 3), 2.0))

    def test_identity_plus_bias(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        w = Tensor(np.ones((1, 1, 1, 1)))
        b = Tensor(np.ones(1))
        out = ops.conv2d(x, w, b)
        assert np.array_equal(out.data[0, 0], [[2.0, 3.0], [4.0, 5.0]])

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 4, 8, 8))
        w = rng.standard_normal((5, 4, 3, 3))
        b = rng.standard_normal(5)
        got = ops.conv2d(t64(x, grad=False), t64(w, grad=False),
                         t64(b, grad=False), stride=1, padding=1)
        want = conv2d_naive(x, w, b, stride=1, padding=1)
        assert np.max(np.abs(got.data - want)) < 1e-6

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (3, 0)])
    def test_output_shape_formula(self, stride, padding):
        rng = np.random.default_rng(1)
        h = w = 11
        kh = kw = 3
        x = Tensor(rng.standard_normal((1, 2, h, w)))
        wt = Tensor(rng.standard_normal((3, 2, kh, kw)))
        out = ops.conv2d(x, wt, None, stride=stride, padding=padding)
        oh = (h + 2 * padding - kh) // stride + 1
        assert out.shape == (1, 3, oh, oh)

    def test_channel_mismatch_raises(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(ShapeError):
            ops.conv2d(x, w, None, padding=1)

    def test_unbatched_input(self):
        rng = np.random.default_rng(2)
        x3 = rng.standard_normal((2, 5, 5)).astype(np.float32)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)).astype(np.float32))
        out3 = ops.conv2d(Tensor(x3), w, None, padding=1)
        out4 = ops.conv2d(Tensor(x3[None]), w, None, padding=1)
        assert out3.shape == (3, 5, 5)
        assert np.array_equal(out3.data, out4.data[0])


# ----------------------------------------------------------------------
# batch normalization

class TestBatchNorm:
    def test_eval_identity(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 4, 4))
        rm, rv = np.zeros(3), np.ones(3)
        out = ops.batch_norm(t64(x, grad=False), t64(np.ones(3)),
                             t64(np.zeros(3)), rm, rv, training=False)
        assert np.allclose(out.data, x, rtol=1e-4, atol=1e-5)

    def test_train_zero_centers_constant(self):
        x = Tensor(np.full((2, 2, 3, 3), 7.0))
        rm, rv = np.zeros(2), np.ones(2)
        out = ops.batch_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)),
                             rm, rv, training=True)
        assert np.max(np.abs(out.data)) < 1e-4

    def test_matches_statistics_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 4, 5, 5))
        gamma = rng.standard_normal(4)
        beta = rng.standard_normal(4)
        rm, rv = np.zeros(4), np.ones(4)
        out = ops.batch_norm(t64(x, grad=False), t64(gamma), t64(beta),
                             rm, rv, training=True, eps=1e-5)
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        var = x.var(axis=(0, 2, 3), keepdims=True)
        want = (x - mean) / np.sqrt(var + 1e-5) * \
            gamma.reshape(1, 4, 1, 1) + beta.reshape(1, 4, 1, 1)
        assert np.max(np.abs(out.data - want)) < 1e-6

    def test_running_stats_update(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 4, 4))
        rm, rv = np.zeros(3), np.ones(3)
        ops.batch_norm(t64(x, grad=False), t64(np.ones(3)), t64(np.zeros(3)),
                       rm, rv, training=True, momentum=0.1)
        n = 2 * 4 * 4
        want_m = 0.1 * x.mean(axis=(0, 2, 3))
        want_v = 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1)
        assert np.allclose(rm, want_m, atol=1e-7)
        assert np.allclose(rv, want_v, atol=1e-7)

    def test_degenerate_batch_raises(self):
        x = Tensor(np.zeros((1, 3, 1, 1)))
        with pytest.raises(ValueError):
            ops.batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)),
                           np.zeros(3), np.ones(3), training=True)


# ----------------------------------------------------------------------
# activations

class TestActivations:
    def test_relu_definition(self):
        out = relu(Tensor(np.array([-1.0, 2.0])))
        assert np.array_equal(out.data, [0.0, 2.0])

    def test_silu_zero(self):
        assert silu(Tensor(np.array([0.0]))).data[0] == 0.0

    def test_sigmoid_zero(self):
        assert sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5

    def test_dispatcher_rejects_unknown(self):
        with pytest.raises(ValueError):
            activation(Tensor(np.zeros(2)), "tanh")


# ----------------------------------------------------------------------
# pooling

class TestPooling:
    def test_max_pool_window(self):
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
        out = ops.max_pool2d(x, 2)
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 4.0

    def test_adaptive_avg_constant(self):
        x = Tensor(np.full((3, 5, 5), 2.5))
        out = ops.adaptive_avg_pool2d(x, 1)
        assert np.allclose(out.data, 2.5)

    def test_adaptive_avg_bin_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((3, 7, 7))
        out = ops.adaptive_avg_pool2d(t64(x, grad=False), 3)
        want = np.zeros((3, 3, 3))
        for i in range(3):
            for j in range(3):
                y0, y1 = (i * 7) // 3, -(-((i + 1) * 7) // 3)
                x0, x1 = (j * 7) // 3, -(-((j + 1) * 7) // 3)
                want[:, i, j] = x[:, y0:y1, x0:x1].mean(axis=(1, 2))
        assert np.max(np.abs(out.data - want)) < 1e-12

    def test_avg_pool_matches_mean(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 2, 4, 4))
        out = ops.avg_pool2d(Tensor(x), 2)
        want = x.reshape(1, 2, 2, 2, 2, 2).mean(axis=(3, 5))
        assert np.allclose(out.data, want, atol=1e-6)

    def test_zero_target_raises(self):
        x = Tensor(np.zeros((1, 4, 4)))
        with pytest.raises(ValueError):
            ops.adaptive_avg_pool2d(x, 0)

    def test_oversized_target_raises(self):
        x = Tensor(np.zeros((1, 4, 4)))
        with pytest.raises(ShapeError):
            ops.adaptive_avg_pool2d(x, 5)

    def test_pool_dispatcher(self):
        x = Tensor(np.arange(16.0).reshape(1, 4, 4))
        assert ops.pool(x, "max", 2).shape == (1, 2, 2)
        assert ops.pool(x, "avg", 2).shape == (1, 2, 2)
        assert ops.pool(x, "adaptive_avg", 2).shape == (1, 2, 2)
        with pytest.raises(ValueError):
            ops.pool(x, "median", 2)


# ----------------------------------------------------------------------
# bilinear upsampling

def upsample_naive(x, out_h, out_w):
    """Per-pixel half-pixel-center interpolation oracle."""
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w))
    for oy in range(out_h):
        for ox in range(out_w):
            sy = (oy + 0.5) * h / out_h - 0.5
            sx = (ox + 0.5) * w / out_w - 0.5
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            fy, fx = sy - y0, sx - x0
            y0c, y1c = np.clip([y0, y0 + 1], 0, h - 1)
            x0c, x1c = np.clip([x0, x0 + 1], 0, w - 1)
            out[:, oy, ox] = (
                x[:, y0c, x0c] * (1 - fy) * (1 - fx)
                + x[:, y0c, x1c] * (1 - fy) * fx
                + x[:, y1c, x0c] * fy * (1 - fx)
                + x[:, y1c, x1c] * fy * fx)
    return out


class TestBilinearUpsample:
    def test_constant_stays_constant(self):
        x = Tensor(np.full((2, 3, 3), 1.25))
        out = ops.bilinear_upsample(x, 7, 9)
        assert np.allclose(out.data, 1.25, atol=1e-6)

    def test_single_pixel_broadcast(self):
        x = Tensor(np.full((1, 1, 1), 3.5))
        out = ops.bilinear_upsample(x, 4, 4)
        assert np.array_equal(out.data, np.full((1, 4, 4), 3.5))

    def test_matches_half_pixel_oracle(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((1, 2, 2, 2))
        out = ops.bilinear_upsample(t64(x, grad=False), 4, 4)
        want = upsample_naive(x[0], 4, 4)
        assert np.max(np.abs(out.data[0] - want)) < 1e-6

    def test_zero_size_raises(self):
        with pytest.raises(ValueError):
            ops.bilinear_upsample(Tensor(np.zeros((1, 2, 2))), 0, 4)


# ----------------------------------------------------------------------
# backward contracts

class TestBackward:
    def test_square_gradient(self):
        x = t64(3.0)
        y = x * x
        y.backward()
        assert abs(x.grad - 6.0) < 1e-12

    def test_conv_sum_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        x = t64(rng.standard_normal((1, 2, 5, 5)))
        w = t64(rng.standard_normal((3, 2, 3, 3)))
        results = check_gradients(
            lambda: ops.conv2d(x, w, None, padding=1).sum(),
            {"x": x, "w": w}, rng, coords_per_leaf=8)
        assert all(r.passed for r in results)

    def test_sigmoid_linear_chain_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        x = t64(rng.standard_normal((4, 2, 2)))
        w = t64(rng.standard_normal((3, 4)))
        results = check_gradients(
            lambda: (sigmoid(ops.channel_matmul(w, x)) ** 2.0).sum(),
            {"x": x, "w": w}, rng, coords_per_leaf=8)
        assert all(r.passed for r in results)

    def test_backward_on_non_scalar_raises(self):
        x = t64(np.ones(3))
        y = x * 2.0
        with pytest.raises(ShapeError):
            y.backward()

    def test_backward_twice_raises(self):
        x = t64(2.0)
        y = x * x
        y.backward()
        with pytest.raises(StateError):
            y.backward()

    def test_gradients_accumulate_across_reuse(self):
        x = t64(2.0)
        y = x * x + x * 3.0
        y.backward()
        assert abs(x.grad - 7.0) < 1e-12

    def test_no_grad_suppresses_recording(self):
        x = t64(2.0)
        with no_grad():
            y = x * x
        assert not y.requires_grad
        assert y._parents == ()

    def test_untracked_leaves_untouched(self):
        x = t64(2.0)
        c = Tensor(np.float64(5.0), dtype=np.float64)
        y = x * c
        y.backward()
        assert c.grad is None


# ----------------------------------------------------------------------
# elementwise / reductions / concat

class TestElementwise:
    def test_add_sub_mul(self):
        a = Tensor(np.array([1.0, 2.0]))
        b = Tensor(np.array([3.0, 5.0]))
        assert np.array_equal((a + b).data, [4.0, 7.0])
        assert np.array_equal((a - b).data, [-2.0, -3.0])
        assert np.array_equal((a * b).data, [3.0, 10.0])

    def test_broadcast_gradients(self):
        rng = np.random.default_rng(11)
        a = t64(rng.standard_normal((2, 3, 2, 2)))
        b = t64(rng.standard_normal((3, 1, 1)))
        results = check_gradients(lambda: ((a * b + b) ** 2.0).sum(),
                                  {"a": a, "b": b}, rng, coords_per_leaf=8)
        assert all(r.passed for r in results)

    def test_concat_channel_axis(self):
        a = Tensor(np.ones((2, 3, 3)))
        b = Tensor(np.zeros((1, 3, 3)))
        out = concat([a, b], axis=-3)
        assert out.shape == (3, 3, 3)
        assert np.array_equal(out.data[:2], np.ones((2, 3, 3)))
        assert np.array_equal(out.data[2:], np.zeros((1, 3, 3)))

    def test_sum_mean_scalars(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        assert x.sum().item() == 15.0
        assert x.mean().item() == 2.5
        assert np.array_equal(x.sum(axis=0).data, [3.0, 5.0, 7.0])


# ----------------------------------------------------------------------
# invariants

class TestInvariants:
    def test_linearity_of_linear_ops(self):
        # checked at 64-bit so the 1e-6 bound measures the math, not
        # float32 quantization of O(10) outputs
        rng = np.random.default_rng(12)
        x = rng.standard_normal((1, 3, 6, 6))
        w = Tensor(rng.standard_normal((2, 3, 3, 3)), dtype=np.float64)
        alpha = 2.5
        for op in (lambda t: ops.conv2d(t, w, None, padding=1),
                   lambda t: ops.bilinear_upsample(t, 9, 9),
                   lambda t: ops.avg_pool2d(t, 2)):
            lhs = op(Tensor(alpha * x, dtype=np.float64)).data
            rhs = alpha * op(Tensor(x, dtype=np.float64)).data
            assert np.max(np.abs(lhs - rhs)) < 1e-6

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32)
        w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        one = ops.conv2d(Tensor(x), Tensor(w), None, padding=1).data
        two = ops.conv2d(Tensor(x), Tensor(w), None, padding=1).data
        assert np.array_equal(one, two)

    def test_default_dtype_is_float32(self):
        assert Tensor([1.0, 2.0]).data.dtype == np.float32
        assert Tensor([1.0], dtype=np.float64).data.dtype == np.float64

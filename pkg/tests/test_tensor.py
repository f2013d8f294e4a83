import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import assert_grad_close, central_difference, naive_conv2d, two_pass_stats
from ldtnet.errors import ContractError, DegenerateBatchError, ShapeError
from ldtnet.tensor import (
    BatchNormParams,
    ConvLayerParams,
    batchnorm_backward,
    batchnorm_forward,
    brelu_backward,
    brelu_forward,
    concat_channels,
    conv2d_backward,
    conv2d_forward,
    split_channels,
)


def conv(kernel, bias):
    return ConvLayerParams(np.asarray(kernel, float), np.asarray(bias, float))


def random_conv(rng, cin, cout, k):
    return conv(rng.normal(size=(cout, k, k, cin)), rng.normal(size=cout))


class TestConvForward:
    def test_scalar_multiply_add(self):
        out = conv2d_forward(np.full((1, 1, 1, 1), 2.0), conv([[[[3.0]]]], [1.0]))
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 7.0

    def test_ones_with_zero_padding(self):
        out = conv2d_forward(np.ones((1, 3, 3, 1)), conv(np.ones((1, 3, 3, 1)), [0.0]), zero_pad=1)
        assert out[0, 1, 1, 0] == 9.0
        assert out[0, 0, 0, 0] == 4.0
        assert out[0, 0, 1, 0] == 6.0

    def test_matches_naive_loops(self, rng):
        x = rng.normal(size=(2, 5, 5, 3))
        p = random_conv(rng, 3, 4, 3)
        expected = naive_conv2d(x, p.kernel, p.bias, 1)
        np.testing.assert_allclose(conv2d_forward(x, p, 1), expected, atol=1e-5, rtol=0)

    def test_float32_matches_naive_loops(self, rng):
        x = rng.normal(size=(2, 5, 5, 3)).astype(np.float32)
        p = ConvLayerParams(rng.normal(size=(4, 3, 3, 3)).astype(np.float32), np.zeros(4, np.float32))
        out = conv2d_forward(x, p)
        assert out.dtype == np.float32
        np.testing.assert_allclose(out, naive_conv2d(x, p.kernel, p.bias, 1), atol=1e-5)

    def test_pointwise_kernel_matches_naive(self, rng):
        x = rng.normal(size=(1, 4, 3, 5))
        p = random_conv(rng, 5, 2, 1)
        np.testing.assert_allclose(conv2d_forward(x, p), naive_conv2d(x, p.kernel, p.bias, 0), atol=1e-12)

    def test_channel_mismatch_names_both_shapes(self, rng):
        p = random_conv(rng, 3, 4, 3)
        with pytest.raises(ShapeError) as info:
            conv2d_forward(np.zeros((1, 4, 4, 2)), p)
        assert "(1, 4, 4, 2)" in str(info.value) and "(4, 3, 3, 3)" in str(info.value)

    def test_valid_padding_shrinks(self, rng):
        out = conv2d_forward(rng.normal(size=(1, 6, 5, 2)), random_conv(rng, 2, 3, 3), zero_pad=0)
        assert out.shape == (1, 4, 3, 3)

    @settings(max_examples=25, deadline=None)
    @given(k=st.sampled_from([1, 3, 5, 7]), h=st.integers(1, 9), w=st.integers(1, 9), seed=st.integers(0, 2**16))
    def test_same_padding_preserves_extents(self, k, h, w, seed):
        rng = np.random.default_rng(seed)
        p = random_conv(rng, 2, 3, k)
        out = conv2d_forward(rng.normal(size=(2, h, w, 2)), p, (k - 1) // 2)
        assert out.shape == (2, h, w, 3)

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
    def test_linearity_without_bias(self, a, b, seed):
        rng = np.random.default_rng(seed)
        p = conv(rng.normal(size=(3, 3, 3, 2)), np.zeros(3))
        x, y = rng.normal(size=(1, 4, 5, 2)), rng.normal(size=(1, 4, 5, 2))
        lhs = conv2d_forward(a * x + b * y, p)
        rhs = a * conv2d_forward(x, p) + b * conv2d_forward(y, p)
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_deterministic(self, rng):
        x = rng.normal(size=(2, 6, 6, 3)).astype(np.float32)
        p = ConvLayerParams(rng.normal(size=(5, 3, 3, 3)).astype(np.float32), np.ones(5, np.float32))
        assert conv2d_forward(x, p).tobytes() == conv2d_forward(x.copy(), p).tobytes()


class TestConvBackward:
    def test_scalar_product_rule(self):
        gi, gk, gb = conv2d_backward(np.full((1, 1, 1, 1), 2.0), conv([[[[3.0]]]], [1.0]), np.ones((1, 1, 1, 1)))
        assert gk.ravel().tolist() == [2.0]
        assert gb.tolist() == [1.0]
        assert gi.ravel().tolist() == [3.0]

    def test_zero_upstream_gives_zero(self, rng):
        x = rng.normal(size=(2, 4, 4, 3))
        p = random_conv(rng, 3, 2, 3)
        for g in conv2d_backward(x, p, np.zeros((2, 4, 4, 2))):
            assert not np.any(g)

    def test_upstream_shape_checked(self, rng):
        with pytest.raises(ShapeError):
            conv2d_backward(rng.normal(size=(1, 4, 4, 3)), random_conv(rng, 3, 2, 3), np.zeros((1, 4, 4, 3)))

    @pytest.mark.parametrize("seed", range(20))
    @pytest.mark.parametrize("k", [1, 3])
    def test_finite_differences(self, seed, k):
        rng = np.random.default_rng(seed)
        b, h, w = rng.integers(1, 3), rng.integers(1, 6), rng.integers(1, 6)
        cin, cout = rng.integers(1, 5), rng.integers(1, 5)
        x = rng.normal(size=(b, h, w, cin))
        p = random_conv(rng, cin, cout, k)
        up = rng.normal(size=(b, h, w, cout))

        def f():
            return float(np.sum(conv2d_forward(x, p) * up))

        gi, gk, gb = conv2d_backward(x, p, up)
        assert_grad_close(gi, central_difference(f, x), label="input")
        assert_grad_close(gk, central_difference(f, p.kernel), label="kernel")
        assert_grad_close(gb, central_difference(f, p.bias), label="bias")


class TestBReLU:
    def test_clamp(self):
        assert brelu_forward(np.array([-0.5, 0.3, 1.7])).tolist() == [0.0, 0.3, 1.0]

    def test_identity_inside_and_fixed_points(self, rng):
        x = rng.uniform(size=50)
        assert np.array_equal(brelu_forward(x), x)
        assert brelu_forward(np.array([0.0, 1.0])).tolist() == [0.0, 1.0]

    def test_backward_mask(self):
        g = brelu_backward(np.array([-0.5, 0.3, 1.7]), np.ones(3))
        assert g.tolist() == [0.0, 1.0, 0.0]

    def test_kinks_use_zero_subgradient(self):
        assert brelu_backward(np.array([0.0, 1.0]), np.ones(2)).tolist() == [0.0, 0.0]

    def test_pass_through_inside(self, rng):
        x = rng.uniform(0.01, 0.99, size=(2, 3, 3, 2))
        up = rng.normal(size=x.shape)
        assert np.array_equal(brelu_backward(x, up), up)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            brelu_backward(np.zeros(3), np.zeros(4))

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences_away_from_kinks(self, seed):
        rng = np.random.default_rng(seed)
        shape = tuple(rng.integers(1, 6, size=4))
        while True:
            x = rng.uniform(-0.5, 1.5, size=shape)
            if not np.any((np.abs(x) < 1e-3) | (np.abs(x - 1) < 1e-3)):
                break
        up = rng.normal(size=shape)
        numeric = central_difference(lambda: float(np.sum(brelu_forward(x) * up)), x, h=1e-4)
        np.testing.assert_allclose(brelu_backward(x, up), numeric, atol=1e-4)


def bn(c, rng=None):
    if rng is None:
        return BatchNormParams(np.ones(c), np.zeros(c), np.zeros(c), np.ones(c))
    return BatchNormParams(rng.uniform(0.5, 2, c), rng.normal(size=c), rng.normal(size=c), rng.uniform(0.5, 2, c))


class TestBatchNorm:
    def test_train_mode_standardizes(self, rng):
        x = rng.normal(3.0, 2.0, size=(4, 5, 5, 3))
        out, _ = batchnorm_forward(x, bn(3), "train")
        flat = out.reshape(-1, 3)
        np.testing.assert_allclose(flat.mean(axis=0), 0, atol=1e-4)
        np.testing.assert_allclose(flat.var(axis=0), 1, atol=1e-4)

    def test_eval_identity_statistics(self, rng):
        x = rng.normal(size=(2, 3, 3, 4))
        out, _ = batchnorm_forward(x, bn(4), "eval")
        np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), atol=1e-12)
        np.testing.assert_allclose(out, x, atol=1e-4)

    def test_matches_two_pass_oracle(self, rng):
        x = rng.normal(1.0, 3.0, size=(3, 4, 5, 2))
        p = bn(2, rng)
        mean, var = two_pass_stats(x)
        expected = p.gamma * (x - mean) / np.sqrt(var + p.eps) + p.shift
        out, cache = batchnorm_forward(x, p, "train")
        np.testing.assert_allclose(out, expected, atol=1e-5)
        np.testing.assert_allclose(cache.updated.running_mean, 0.9 * p.running_mean + 0.1 * mean, atol=1e-12)
        np.testing.assert_allclose(cache.updated.running_var, 0.9 * p.running_var + 0.1 * var, atol=1e-12)

    def test_float32_storage_uses_wide_statistics(self, rng):
        x = (1000.0 + rng.normal(size=(4, 8, 8, 2))).astype(np.float32)
        out, _ = batchnorm_forward(x, BatchNormParams.fresh(2), "train")
        assert out.dtype == np.float32
        np.testing.assert_allclose(out.reshape(-1, 2).mean(axis=0), 0, atol=1e-3)

    def test_eval_mode_leaves_params_untouched(self, rng):
        p = bn(3, rng)
        _, cache = batchnorm_forward(rng.normal(size=(1, 2, 2, 3)), p, "eval")
        assert cache.mode == "eval" and cache.updated is None

    def test_degenerate_batch(self):
        with pytest.raises(DegenerateBatchError):
            batchnorm_forward(np.ones((1, 1, 1, 2)), bn(2), "train")

    def test_eval_cache_rejected_by_backward(self, rng):
        _, cache = batchnorm_forward(rng.normal(size=(2, 2, 2, 1)), bn(1), "eval")
        with pytest.raises(ContractError):
            batchnorm_backward(cache, np.ones((2, 2, 2, 1)))

    def test_channel_mismatch(self, rng):
        with pytest.raises(ShapeError):
            batchnorm_forward(rng.normal(size=(2, 2, 2, 3)), bn(2), "train")

    def test_zero_upstream(self, rng):
        _, cache = batchnorm_forward(rng.normal(size=(2, 3, 3, 2)), bn(2, rng), "train")
        for g in batchnorm_backward(cache, np.zeros((2, 3, 3, 2))):
            assert not np.any(g)

    def test_near_constant_input_has_bounded_gradient(self, rng):
        x = 0.5 + 1e-9 * rng.normal(size=(2, 3, 3, 2))
        _, cache = batchnorm_forward(x, bn(2), "train")
        gi, gg, gs = batchnorm_backward(cache, rng.normal(size=x.shape))
        for g in (gi, gg, gs):
            assert np.all(np.isfinite(g))
        assert np.abs(gi).max() < 1e4

    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(1, 4)), int(rng.integers(2, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 5)))
        x = rng.normal(size=shape)
        p = bn(shape[3], rng)
        up = rng.normal(size=shape)

        def f():
            return float(np.sum(batchnorm_forward(x, p, "train")[0] * up))

        _, cache = batchnorm_forward(x, p, "train")
        gi, gg, gs = batchnorm_backward(cache, up)
        assert_grad_close(gi, central_difference(f, x), label="input")
        assert_grad_close(gg, central_difference(f, p.gamma), label="gamma")
        assert_grad_close(gs, central_difference(f, p.shift), label="shift")

    def test_params_validated(self):
        with pytest.raises(ValueError):
            BatchNormParams(np.ones(2), np.zeros(2), np.zeros(2), -np.ones(2))
        with pytest.raises(ValueError):
            BatchNormParams(np.ones(2), np.zeros(2), np.zeros(2), np.ones(2), eps=0.0)


class TestConcat:
    def test_extents(self):
        assert concat_channels(np.zeros((1, 2, 2, 30)), np.zeros((1, 2, 2, 3))).shape == (1, 2, 2, 33)

    def test_zero_channel_identity(self, rng):
        a = rng.normal(size=(2, 3, 3, 4))
        assert np.array_equal(concat_channels(a, np.zeros((2, 3, 3, 0))), a)

    def test_round_trip_and_order(self, rng):
        a, b = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(2, 3, 4, 2))
        c = concat_channels(a, b)
        left, right = split_channels(c, 5)
        assert left.tobytes() == a.tobytes() and right.tobytes() == b.tobytes()

    def test_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            concat_channels(np.zeros((1, 2, 2, 1)), np.zeros((1, 2, 3, 1)))

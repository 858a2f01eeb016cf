"""Forward and gradient checks for every autodiff primitive."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handdepth.errors import ShapeError
from handdepth.tensor import (
    Tensor,
    add,
    batch_norm,
    concat_features,
    conv2d,
    max_pool2d,
    mul,
    no_grad,
    relu,
    scale,
    sub,
    tmean,
    tsum,
    upsample_nearest2x,
)

from oracles import (
    batchnorm_scalar,
    conv2d_loopnest,
    max_relative_error,
    maxpool_scan,
    numeric_gradient,
)

RTOL = 1e-6


def rng64(seed=0):
    return np.random.default_rng(seed)


def fd_check(build_loss, leaves, rtol=RTOL, h=1e-5):
    """Compare analytic grads of ``build_loss()`` against central finite
    differences for every float64 leaf array in ``leaves``."""
    for t in leaves:
        t.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = [t.grad.copy() for t in leaves]
    for t, ana in zip(leaves, analytic):
        num = numeric_gradient(lambda: build_loss().item(), t.data, h=h)
        err = max_relative_error(ana, num)
        assert err < rtol, f"gradient mismatch {err:.3e} for leaf {t.shape}"


class TestConv2d:
    def test_identity_kernel(self):
        x = Tensor(np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3))
        w = Tensor(np.array([[[[1.0]]]], dtype=np.float32))
        b = Tensor(np.zeros(1, dtype=np.float32))
        out = conv2d(x, w, b)
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_input_gives_bias(self):
        rng = rng64(1)
        x = Tensor(np.zeros((2, 3, 5, 5), dtype=np.float32))
        w = Tensor(rng.normal(size=(4, 3, 3, 3)).astype(np.float32))
        b = Tensor(np.array([1.5, -2.0, 0.25, 3.0], dtype=np.float32))
        out = conv2d(x, w, b, stride=1, padding=1)
        for ch, beta in enumerate(b.data):
            np.testing.assert_allclose(out.data[:, ch], beta, rtol=1e-6)

    def test_matches_loopnest_oracle(self):
        rng = rng64(2)
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
        want = conv2d_loopnest(x, w, b, stride=2, padding=1)
        assert np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-12)) < 1e-5

    def test_output_extent_formula(self):
        x = Tensor(np.zeros((1, 2, 11, 9)))
        w = Tensor(np.zeros((3, 2, 3, 3)))
        out = conv2d(x, w, stride=2, padding=1)
        assert out.shape == (1, 3, (11 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_channel_mismatch_names_axis(self):
        x = Tensor(np.zeros((1, 5, 4, 4)))
        w = Tensor(np.zeros((2, 3, 3, 3)))
        with pytest.raises(ShapeError, match="axis 1"):
            conv2d(x, w)

    def test_kernel_exceeding_extent_rejected(self):
        x = Tensor(np.zeros((1, 1, 2, 2)))
        w = Tensor(np.zeros((1, 1, 5, 5)))
        with pytest.raises(ShapeError):
            conv2d(x, w)

    def test_linearity_in_input(self):
        rng = rng64(3)
        w = Tensor(rng.normal(size=(4, 2, 3, 3)).astype(np.float32))
        b = Tensor(rng.normal(size=4).astype(np.float32))
        x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
        y = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
        a, bb = 1.7, -0.6
        lhs = conv2d(Tensor(a * x + bb * y), w, b, padding=1).data
        cx = conv2d(Tensor(x), w, b, padding=1).data
        cy = conv2d(Tensor(y), w, b, padding=1).data
        bias_img = conv2d(Tensor(np.zeros_like(x)), w, b, padding=1).data
        rhs = a * cx + bb * cy - (a + bb - 1) * bias_img
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_gradients(self):
        rng = rng64(4)
        x = Tensor(rng.normal(size=(2, 3, 6, 6)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        mixer = rng.normal(size=(2, 4, 3, 3))  # break gradient symmetry

        def build():
            return tsum(mul(conv2d(x, w, b, stride=2, padding=1), Tensor(mixer)))

        fd_check(build, [x, w, b])


class TestBatchNorm:
    def test_constant_input_maps_to_beta(self):
        x = Tensor(np.full((2, 3, 4, 4), 7.0, dtype=np.float32))
        gamma = Tensor(np.ones(3, dtype=np.float32))
        beta = Tensor(np.zeros(3, dtype=np.float32))
        rm, rv = np.zeros(3), np.ones(3)
        out = batch_norm(x, gamma, beta, rm, rv, training=True)
        assert np.all(np.abs(out.data) <= 1e-2)  # zero-variance channel, eps-bounded

    def test_normalized_input_is_fixed_point(self):
        rng = rng64(5)
        x = rng.normal(size=(4, 2, 8, 8))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        gamma = Tensor(np.ones(2))
        beta = Tensor(np.zeros(2))
        out = batch_norm(Tensor(x), gamma, beta, np.zeros(2), np.ones(2), training=True)
        np.testing.assert_allclose(out.data, x, atol=1e-4)

    def test_matches_scalar_formula(self):
        rng = rng64(6)
        x = rng.normal(size=(4, 2, 5, 5))
        gamma = rng.normal(size=2)
        beta = rng.normal(size=2)
        got = batch_norm(
            Tensor(x), Tensor(gamma), Tensor(beta), np.zeros(2), np.ones(2), training=True
        ).data
        want = batchnorm_scalar(x, gamma, beta, eps=1e-5)
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)

    def test_train_mode_statistics(self):
        rng = rng64(7)
        x = rng.normal(size=(8, 3, 6, 6))
        gamma = np.array([1.0, 2.0, 0.5])
        beta = np.array([0.0, -1.0, 3.0])
        out = batch_norm(
            Tensor(x), Tensor(gamma), Tensor(beta), np.zeros(3), np.ones(3), training=True
        ).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), beta, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), gamma**2, rtol=1e-3)

    def test_eval_before_any_train_step_uses_unit_stats(self):
        rng = rng64(8)
        x = rng.normal(size=(2, 2, 4, 4))
        out = batch_norm(
            Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
            np.zeros(2), np.ones(2), training=False,
        ).data
        np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-6)

    def test_running_stats_ema(self):
        rng = rng64(9)
        x = rng.normal(loc=3.0, size=(4, 1, 8, 8))
        rm, rv = np.zeros(1), np.ones(1)
        batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, training=True)
        n = 4 * 8 * 8
        np.testing.assert_allclose(rm, 0.1 * x.mean(), rtol=1e-6)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var() * n / (n - 1), rtol=1e-6)

    def test_gradients_train_and_eval(self):
        rng = rng64(10)
        x = Tensor(rng.normal(size=(3, 2, 4, 4)), requires_grad=True)
        gamma = Tensor(rng.normal(size=2) + 1.0, requires_grad=True)
        beta = Tensor(rng.normal(size=2), requires_grad=True)
        mixer = Tensor(rng.normal(size=(3, 2, 4, 4)))
        rm, rv = rng.normal(size=2), rng.uniform(0.5, 2.0, size=2)

        for training in (True, False):
            def build():
                out = batch_norm(x, gamma, beta, rm.copy(), rv.copy(), training=training)
                return tsum(mul(out, mixer))

            fd_check(build, [x, gamma, beta])


class TestElementwiseAndStructural:
    def test_relu_sign_cases(self):
        out = relu(Tensor(np.array([-1.0, 0.0, 2.0])))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_pool_then_upsample_constant_fixed_point(self):
        x = Tensor(np.full((1, 2, 8, 8), 3.25, dtype=np.float32))
        out = upsample_nearest2x(max_pool2d(x))
        np.testing.assert_array_equal(out.data, x.data)

    def test_max_pool_matches_window_scan(self):
        rng = rng64(11)
        x = rng.normal(size=(1, 1, 4, 4))
        got = max_pool2d(Tensor(x)).data
        np.testing.assert_array_equal(got, maxpool_scan(x))

    def test_max_pool_odd_extent_rejected(self):
        with pytest.raises(ShapeError, match="even"):
            max_pool2d(Tensor(np.zeros((1, 1, 5, 4))))

    def test_upsample_doubles_and_replicates(self):
        x = np.arange(4, dtype=np.float32).reshape(1, 1, 2, 2)
        out = upsample_nearest2x(Tensor(x)).data
        assert out.shape == (1, 1, 4, 4)
        np.testing.assert_array_equal(
            out[0, 0], [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]]
        )

    def test_add_shape_mismatch(self):
        with pytest.raises(ShapeError):
            add(Tensor(np.zeros((1, 2))), Tensor(np.zeros((2, 1))))

    def test_concat_features(self):
        a = Tensor(np.ones((1, 2, 3, 3)))
        b = Tensor(np.zeros((1, 3, 3, 3)))
        out = concat_features([a, b])
        assert out.shape == (1, 5, 3, 3)
        with pytest.raises(ShapeError, match="axes 0, 2, 3"):
            concat_features([a, Tensor(np.zeros((1, 3, 4, 3)))])

    @pytest.mark.parametrize("op_name", ["relu", "pool", "upsample", "add", "sub", "mul", "scale", "concat", "mean"])
    def test_gradients(self, op_name):
        rng = rng64(12)
        x = Tensor(rng.normal(size=(2, 4, 4, 4)), requires_grad=True)
        y = Tensor(rng.normal(size=(2, 4, 4, 4)), requires_grad=True)
        mixer = Tensor(rng.normal(size=(2, 4, 4, 4)))
        up_mixer = Tensor(rng.normal(size=(2, 4, 8, 8)))
        pool_mixer = Tensor(rng.normal(size=(2, 4, 2, 2)))
        cat_mixer = Tensor(rng.normal(size=(2, 8, 4, 4)))

        builds = {
            "relu": lambda: tsum(mul(relu(x), mixer)),
            "pool": lambda: tsum(mul(max_pool2d(x), pool_mixer)),
            "upsample": lambda: tsum(mul(upsample_nearest2x(x), up_mixer)),
            "add": lambda: tsum(mul(add(x, y), mixer)),
            "sub": lambda: tsum(mul(sub(x, y), mixer)),
            "mul": lambda: tsum(mul(mul(x, y), mixer)),
            "scale": lambda: tsum(mul(scale(x, -1.7), mixer)),
            "concat": lambda: tsum(mul(concat_features([x, y]), cat_mixer)),
            "mean": lambda: scale(tmean(mul(x, mixer)), 3.0),
        }
        leaves = [x] if op_name in ("relu", "pool", "upsample", "scale", "mean") else [x, y]
        fd_check(builds[op_name], leaves)


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 2, 2, 5)), requires_grad=True)
        tsum(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))

    def test_quadratic_gradient_is_x(self):
        x = Tensor(np.random.default_rng(1).normal(size=(4, 7)), requires_grad=True)
        scale(tsum(mul(x, x)), 0.5).backward()
        np.testing.assert_allclose(x.grad, x.data, rtol=1e-6)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            add(x, x).backward()

    def test_fanout_accumulates_once_per_consumer(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = add(add(x, x), x)  # 3x, three consumer edges
        tsum(y).backward()
        np.testing.assert_array_equal(x.grad, [3.0])

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with no_grad():
            out = relu(x)
        assert out._backward is None and not out.requires_grad

    def test_determinism_bitwise(self):
        rng = rng64(13)
        x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)

        def run():
            out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=1, padding=1)
            out = relu(out)
            return max_pool2d(out).data.tobytes()

        assert run() == run()

    def test_deep_graph_does_not_overflow(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        y = x
        for _ in range(3000):
            y = scale(y, 1.0)
        tsum(y).backward()
        np.testing.assert_array_equal(x.grad, np.ones_like(x.data))


class TestFiniteness:
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_forward_ops_finite_on_finite_inputs(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(scale=5.0, size=(1, 4, 4, 4)).astype(np.float32))
        w = Tensor(rng.normal(size=(4, 4, 3, 3)).astype(np.float32))
        b = Tensor(rng.normal(size=4).astype(np.float32))
        out = conv2d(x, w, b, padding=1)
        out = batch_norm(
            out, Tensor(np.ones(4, np.float32)), Tensor(np.zeros(4, np.float32)),
            np.zeros(4), np.ones(4), training=True,
        )
        out = upsample_nearest2x(max_pool2d(relu(out)))
        assert np.isfinite(out.data).all()

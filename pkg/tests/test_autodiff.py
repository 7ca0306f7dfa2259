"""Gradient checks for every primitive, tape semantics and the optimizer."""

import numpy as np
import pytest

from conftest import check_grad
from equimage import autodiff as ad
from equimage.autodiff import OptimizerState, Tape, adam_step
from equimage.groups import GroupSpec, sample_transform
from equimage.physics import BlurDownsample, gaussian_mtf_kernel, random_mask
from equimage.warp import build_warp


def scalarize(_=None):
    """Reduce any tensor to a scalar with a fixed random projection (stable
    across repeated evaluations, as finite differencing requires)."""
    cache = {}

    def inner(tape, t):
        shape = t.values.shape
        if shape not in cache:
            cache[shape] = np.random.default_rng(4242).standard_normal(shape)
        return ad.total(ad.mul(t, tape.leaf(cache[shape])))

    return inner


def grad_of(build, x0, shape):
    """Gradient of build(tape, leaf) w.r.t. the leaf, via one backward pass."""
    tape = Tape()
    leaf = tape.leaf(x0.reshape(shape), requires_grad=True)
    loss = build(tape, leaf)
    grads = tape.backward(loss)
    return grads[leaf.node_id].ravel()


def value_of(build, x0, shape):
    tape = Tape()
    leaf = tape.leaf(x0.reshape(shape), requires_grad=True)
    return float(build(tape, leaf).values)


def run_grad_check(build, shape, rng, positive=False, away_from_kinks=False):
    x0 = rng.standard_normal(shape)
    if positive:
        x0 = np.abs(x0) + 0.5
    if away_from_kinks:
        x0 = np.where(np.abs(x0) < 0.2, 0.3 * np.sign(x0 + 1e-12), x0)
    check_grad(
        lambda v: value_of(build, v, shape),
        lambda v: grad_of(build, v, shape),
        x0.ravel(),
    )


class TestElementwisePrimitives:
    SHAPE = (2, 5, 5)

    def test_add(self, rng):
        other = rng.standard_normal(self.SHAPE)
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.add(x, tape.leaf(other))), self.SHAPE, rng
        )

    def test_sub(self, rng):
        other = rng.standard_normal(self.SHAPE)
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.sub(tape.leaf(other), x)), self.SHAPE, rng
        )

    def test_mul(self, rng):
        other = rng.standard_normal(self.SHAPE)
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.mul(x, tape.leaf(other))), self.SHAPE, rng
        )

    def test_mul_both_sides(self, rng):
        # d(x*x) = 2x via the two-parent accumulation path
        reduce = scalarize(None)
        run_grad_check(lambda tape, x: reduce(tape, ad.mul(x, x)), self.SHAPE, rng)

    def test_scale(self, rng):
        reduce = scalarize(None)
        run_grad_check(lambda tape, x: reduce(tape, ad.scale(x, -2.5)), self.SHAPE, rng)

    def test_relu(self, rng):
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.relu(x)), self.SHAPE, rng, away_from_kinks=True
        )

    def test_relu_subgradients(self):
        tape = Tape()
        x = tape.leaf(np.array([-2.0, 3.0]), requires_grad=True)
        loss = ad.total(ad.relu(x))
        grads = tape.backward(loss)
        np.testing.assert_array_equal(grads[x.node_id], [0.0, 1.0])

    def test_absolute(self, rng):
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.absolute(x)), self.SHAPE, rng,
            away_from_kinks=True,
        )

    def test_square(self, rng):
        reduce = scalarize(None)
        run_grad_check(lambda tape, x: reduce(tape, ad.square(x)), self.SHAPE, rng)

    def test_sqrt(self, rng):
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.sqrt(x)), self.SHAPE, rng, positive=True
        )

    def test_mean_gradient_uniform(self):
        tape = Tape()
        x = tape.leaf(np.arange(12.0).reshape(3, 2, 2), requires_grad=True)
        grads = tape.backward(ad.mean(x))
        np.testing.assert_allclose(grads[x.node_id], np.full((3, 2, 2), 1 / 12))

    def test_sum_gradient_ones(self):
        tape = Tape()
        x = tape.leaf(np.arange(6.0), requires_grad=True)
        grads = tape.backward(ad.total(x))
        np.testing.assert_array_equal(grads[x.node_id], np.ones(6))

    def test_squared_norm_gradient(self, rng):
        tape = Tape()
        x0 = rng.standard_normal((4, 4))
        x = tape.leaf(x0, requires_grad=True)
        grads = tape.backward(ad.total(ad.square(x)))
        np.testing.assert_allclose(grads[x.node_id], 2 * x0, atol=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        tape = Tape()
        a = tape.leaf(rng.random((2, 3)))
        b = tape.leaf(rng.random((3, 2)))
        with pytest.raises(ValueError):
            ad.add(a, b)

    def test_concat_channels(self, rng):
        other = rng.standard_normal((3, 5, 5))
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.concat_channels(x, tape.leaf(other))),
            (2, 5, 5), rng,
        )


class TestConv2d:
    def test_identity_1x1_kernel(self, rng):
        tape = Tape()
        x0 = rng.standard_normal((1, 6, 6))
        x = tape.leaf(x0, requires_grad=True)
        w = tape.leaf(np.ones((1, 1, 1, 1)), requires_grad=True)
        out = ad.conv2d(x, w)
        np.testing.assert_array_equal(out.values, x0)
        grads = tape.backward(ad.total(out))
        np.testing.assert_allclose(grads[x.node_id], np.ones_like(x0))

    @pytest.mark.parametrize("padding", ["reflect", "zero"])
    def test_grad_wrt_input(self, rng, padding):
        w0 = rng.standard_normal((2, 2, 3, 3)) * 0.5
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.conv2d(x, tape.leaf(w0), padding=padding)),
            (2, 6, 6), rng,
        )

    @pytest.mark.parametrize("padding", ["reflect", "zero"])
    def test_grad_wrt_weight_and_bias(self, rng, padding):
        x0 = rng.standard_normal((2, 6, 6))
        b0 = rng.standard_normal(3) * 0.1
        reduce = scalarize(None)

        def build_w(tape, w):
            return reduce(tape, ad.conv2d(tape.leaf(x0), w, tape.leaf(b0), padding))

        run_grad_check(build_w, (3, 2, 3, 3), rng)

        w0 = rng.standard_normal((3, 2, 3, 3)) * 0.5

        def build_b(tape, b):
            return reduce(tape, ad.conv2d(tape.leaf(x0), tape.leaf(w0), b, padding))

        run_grad_check(build_b, (3,), rng)

    def test_channel_mismatch_rejected(self, rng):
        tape = Tape()
        x = tape.leaf(rng.random((2, 4, 4)))
        w = tape.leaf(rng.random((1, 3, 3, 3)))
        with pytest.raises(ValueError):
            ad.conv2d(x, w)


class TestStructuredPrimitives:
    def test_upsample_grad(self, rng):
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.upsample_bilinear(x, 2)), (2, 4, 4), rng
        )

    def test_upsample_constant(self):
        tape = Tape()
        x = tape.leaf(np.full((3, 4, 4), 0.3))
        out = ad.upsample_bilinear(x, 4)
        assert out.values.shape == (3, 16, 16)
        np.testing.assert_allclose(out.values, 0.3, atol=1e-12)

    def test_linear_op_warp(self, rng):
        table = build_warp(
            sample_transform(GroupSpec(kind="pan_tilt", height=6, width=6,
                                       range_fraction=1.0), rng), 6, 6
        )
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.linear_op(table, x)), (2, 6, 6), rng
        )

    def test_linear_op_blur_downsample(self, rng):
        op = BlurDownsample(kernel=gaussian_mtf_kernel(1.0, size=5), factor=2)
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.linear_op(op, x)), (1, 8, 8), rng
        )

    def test_linear_op_mask(self, rng):
        op = random_mask(0.5, 6, 6, rng)
        reduce = scalarize(None)
        run_grad_check(
            lambda tape, x: reduce(tape, ad.linear_op(op, x)), (2, 6, 6), rng
        )


class TestTapeSemantics:
    def test_non_scalar_loss_rejected(self, rng):
        tape = Tape()
        x = tape.leaf(rng.random((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            tape.backward(ad.square(x))

    def test_foreign_tensor_rejected(self, rng):
        t1, t2 = Tape(), Tape()
        a = t1.leaf(rng.random(3))
        b = t2.leaf(rng.random(3))
        with pytest.raises(ValueError):
            ad.add(a, b)

    def test_backward_loss_from_other_tape_rejected(self, rng):
        t1, t2 = Tape(), Tape()
        x = t1.leaf(rng.random(3), requires_grad=True)
        loss = ad.mean(ad.square(x))
        with pytest.raises(ValueError):
            t2.backward(loss)

    def test_repeated_backward_identical(self, rng):
        tape = Tape()
        x = tape.leaf(rng.standard_normal((3, 4, 4)), requires_grad=True)
        y = tape.leaf(rng.standard_normal((3, 4, 4)))
        loss = ad.mean(ad.square(ad.sub(ad.relu(x), y)))
        g1 = tape.backward(loss)[x.node_id]
        g2 = tape.backward(loss)[x.node_id]
        np.testing.assert_array_equal(g1, g2)

    def test_grad_skipped_for_constant_leaves(self, rng):
        tape = Tape()
        x = tape.leaf(rng.random(4), requires_grad=True)
        c = tape.leaf(rng.random(4), requires_grad=False)
        grads = tape.backward(ad.total(ad.mul(x, c)))
        assert x.node_id in grads
        assert c.node_id not in grads

    def test_rank_limit(self):
        tape = Tape()
        with pytest.raises(ValueError):
            tape.leaf(np.zeros((1, 1, 1, 1, 1)))

    def test_nonfinite_leaf_rejected(self):
        tape = Tape()
        with pytest.raises(ValueError):
            tape.leaf(np.array([1.0, np.nan]))


class TestAdam:
    def test_zero_gradient_leaves_only_l2_shrinkage(self):
        params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
        before = params["w"].copy()
        state = OptimizerState(lr=1e-2, weight_decay=1e-4)
        adam_step(state, params, {"w": np.zeros(2, dtype=np.float32)})
        assert np.all(np.abs(params["w"]) < np.abs(before))
        np.testing.assert_allclose(params["w"], before, atol=2e-2)

    def test_first_step_direction(self):
        params = {"w": np.array([0.0], dtype=np.float32)}
        state = OptimizerState(lr=1e-3, weight_decay=0.0)
        adam_step(state, params, {"w": np.array([1.0], dtype=np.float32)})
        assert params["w"][0] < 0
        np.testing.assert_allclose(params["w"][0], -1e-3, rtol=1e-4)

    def test_quadratic_bowl_convergence(self, rng):
        target = rng.standard_normal(6).astype(np.float32)
        params = {"w": np.zeros(6, dtype=np.float32)}
        state = OptimizerState(lr=1e-2, decay=1.0, weight_decay=0.0)
        for _ in range(2000):
            grad = 2.0 * (params["w"] - target)
            adam_step(state, params, {"w": grad})
        assert np.max(np.abs(params["w"] - target)) < 1e-3

    def test_lr_decays_per_epoch(self):
        state = OptimizerState(lr=1e-3, decay=0.9)
        state.start_epoch(2)
        assert abs(state.current_lr - 1e-3 * 0.81) < 1e-15

    def test_deterministic_trajectory(self, rng):
        def run():
            p = {"w": np.ones(4, dtype=np.float32)}
            s = OptimizerState(lr=1e-3)
            g_rng = np.random.default_rng(11)
            for _ in range(50):
                adam_step(s, p, {"w": g_rng.standard_normal(4).astype(np.float32)})
            return p["w"]

        np.testing.assert_array_equal(run(), run())

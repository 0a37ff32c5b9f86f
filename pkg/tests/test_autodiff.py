"""Tape mechanics, kernel forward values, and finite-difference checks."""

import numpy as np
import pytest

from styleinv.autodiff import (AutodiffError, FiniteError, ShapeError, Tape,
                               check_scalar_fn, gradient_check, kernel_names)


def naive_conv(x, w, stride, pad):
    """Reference convolution via explicit loops (independent of the kernels)."""
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.zeros((n, ci, h + 2 * pad, wd + 2 * pad), x.dtype)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    y = np.zeros((n, co, ho, wo), x.dtype)
    for b in range(n):
        for o in range(co):
            for oi in range(ho):
                for oj in range(wo):
                    patch = xp[b, :, oi * stride:oi * stride + kh,
                               oj * stride:oj * stride + kw]
                    y[b, o, oi, oj] = np.sum(patch * w[o])
    return y


class TestTapeMechanics:
    def test_leaf_and_const_grad_flags(self):
        tape = Tape(np.float64)
        a = tape.leaf(np.ones(3), requires_grad=True)
        c = tape.const(np.ones(3))
        assert a.requires_grad and not c.requires_grad

    def test_ops_on_consts_are_not_recorded(self):
        tape = Tape(np.float64)
        c = tape.const(np.ones(3))
        tape.add(c, c)
        assert tape.n_ops == 0

    def test_backward_accumulates_into_leaves(self):
        tape = Tape(np.float64)
        a = tape.leaf(np.array([1.0, 2.0]), requires_grad=True)
        loss = tape.sum_all(tape.add(a, a))
        tape.backward(loss)
        np.testing.assert_allclose(a.grad, [2.0, 2.0])

    def test_backward_after_reset_raises(self):
        tape = Tape(np.float64)
        a = tape.leaf(np.array([3.0]), requires_grad=True)
        loss = tape.sum_all(tape.square(a))
        tape.backward(loss)
        np.testing.assert_allclose(a.grad, [6.0])
        tape.reset()
        with pytest.raises(AutodiffError):
            tape.backward(loss)

    def test_reset_drops_ops_and_zero_grad_clears(self):
        tape = Tape(np.float64)
        a = tape.leaf(np.array([3.0]), requires_grad=True)
        loss = tape.sum_all(tape.square(a))
        tape.backward(loss)
        tape.reset()
        a.zero_grad()
        assert tape.n_ops == 0 and a.grad is None

    def test_backward_needs_scalar(self):
        tape = Tape(np.float64)
        a = tape.leaf(np.ones(3), requires_grad=True)
        y = tape.add(a, a)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_backward_without_ops_raises(self):
        tape = Tape(np.float64)
        a = tape.leaf(np.array(1.0))
        with pytest.raises(AutodiffError):
            tape.backward(a)

    def test_cross_tape_mixing_raises(self):
        t1, t2 = Tape(np.float64), Tape(np.float64)
        a = t1.leaf(np.ones(3))
        b = t2.leaf(np.ones(3))
        with pytest.raises(AutodiffError):
            t1.add(a, b)

    def test_tape_dtype_coerces_inputs(self):
        tape = Tape(np.float32)
        a = tape.leaf(np.ones(3, dtype=np.float64))
        assert a.data.dtype == np.float32

    def test_accum_grad_copies_first_contribution(self):
        tape = Tape(np.float64)
        a = tape.leaf(np.ones(3))
        g = np.ones(3)
        a.accum_grad(g)
        g[:] = 7.0
        np.testing.assert_allclose(a.grad, [1.0, 1.0, 1.0])


class TestForwardValues:
    def test_matmul_known_product(self):
        tape = Tape(np.float64)
        a = tape.leaf(np.array([[1.0, 2.0], [3.0, 4.0]]))
        b = tape.leaf(np.array([[5.0, 6.0], [7.0, 8.0]]))
        y = tape.matmul(a, b)
        np.testing.assert_array_equal(y.data, [[19.0, 22.0], [43.0, 50.0]])

    @pytest.mark.parametrize("shape_x,shape_w,stride,pad", [
        ((2, 3, 8, 8), (4, 3, 3, 3), 1, 1),
        ((2, 4, 8, 8), (5, 4, 3, 3), 2, 1),
        ((3, 2, 5, 7), (2, 2, 1, 1), 1, 0),
    ])
    def test_conv2d_matches_naive_loops(self, shape_x, shape_w, stride, pad):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(shape_x)
        w = rng.standard_normal(shape_w)
        tape = Tape(np.float64)
        y = tape.conv2d(tape.leaf(x), tape.leaf(w), stride=stride, pad=pad)
        np.testing.assert_allclose(y.data, naive_conv(x, w, stride, pad),
                                   rtol=1e-12, atol=1e-12)

    def test_block_matmul_is_per_layer(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((2, 3, 4))
        w = rng.standard_normal((3, 4, 5))
        tape = Tape(np.float64)
        y = tape.block_matmul(tape.leaf(a), tape.leaf(w))
        ref = np.stack([a[:, l, :] @ w[l] for l in range(3)], axis=1)
        np.testing.assert_allclose(y.data, ref, rtol=1e-12)

    def test_upsample2x_repeats_pixels(self):
        tape = Tape(np.float64)
        x = tape.leaf(np.arange(4.0).reshape(1, 1, 2, 2))
        y = tape.upsample2x(x)
        np.testing.assert_array_equal(
            y.data[0, 0], [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])

    def test_instance_norm_stats(self):
        rng = np.random.default_rng(2)
        tape = Tape(np.float64)
        y = tape.instance_norm(tape.leaf(rng.standard_normal((2, 3, 8, 8)) * 5 + 2))
        np.testing.assert_allclose(y.data.mean(axis=(2, 3)), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.data.var(axis=(2, 3)), 1.0, atol=1e-6)

    def test_channel_affine_formula(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 4, 4))
        s = rng.standard_normal((2, 3))
        t = rng.standard_normal((2, 3))
        tape = Tape(np.float64)
        y = tape.channel_affine(tape.leaf(x), tape.leaf(s), tape.leaf(t))
        ref = x * s[:, :, None, None] + t[:, :, None, None]
        np.testing.assert_allclose(y.data, ref, rtol=1e-12)

    def test_channel_unit_norm_lengths(self):
        rng = np.random.default_rng(4)
        tape = Tape(np.float64)
        y = tape.channel_unit_norm(tape.leaf(rng.standard_normal((2, 5, 3, 3))))
        norms = np.linalg.norm(y.data, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_channel_unit_norm_zero_vector_is_finite(self):
        tape = Tape(np.float64)
        y = tape.channel_unit_norm(tape.leaf(np.zeros((1, 4, 2, 2))))
        assert np.all(np.isfinite(y.data)) and np.all(y.data == 0.0)

    def test_leaky_relu_two_slopes(self):
        tape = Tape(np.float64)
        y = tape.leaky_relu(tape.leaf(np.array([-2.0, 0.0, 3.0])), slope=0.2)
        np.testing.assert_allclose(y.data, [-0.4, 0.0, 3.0])

    def test_mean_rows_reduces_trailing_axes(self):
        tape = Tape(np.float64)
        x = tape.leaf(np.arange(24.0).reshape(2, 3, 4))
        y = tape.mean_rows(x)
        np.testing.assert_allclose(y.data, np.arange(24.0).reshape(2, -1).mean(axis=1))


class TestFiniteGuard:
    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_overflowing_op_raises_named_error(self):
        tape = Tape(np.float32)
        a = tape.leaf(np.array([1e19], dtype=np.float32))
        b = tape.square(a)  # 1e38, still finite in float32
        with pytest.raises(FiniteError, match="mul"):
            tape.mul(b, b)

    def test_nan_propagation_is_caught_at_first_op(self):
        tape = Tape(np.float32)
        a = tape.leaf(np.array([np.nan], dtype=np.float32))
        with pytest.raises(FiniteError, match="add"):
            tape.add(a, a)


class TestGradients:
    @pytest.mark.parametrize("kind", kernel_names())
    def test_kernel_matches_finite_differences(self, kind):
        report = gradient_check(kind, seed=7)
        assert report["passed"], f"{kind}: rel={report['max_rel']:.3e}"

    def test_check_scalar_fn_on_quadratic(self):
        def quad(tape, a):
            return tape.sum_all(tape.square(a))
        report = check_scalar_fn(quad, [np.array([1.0, -2.0, 3.0])])
        assert report["max_rel"] < 1e-8

    def test_second_seed_also_passes(self):
        for kind in ("conv2d_3x3_s1", "instance_norm", "matmul"):
            assert gradient_check(kind, seed=11)["passed"]

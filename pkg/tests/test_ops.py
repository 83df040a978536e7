import numpy as np
import pytest

from conftest import (conv1d_strided_direct, conv1d_transpose_direct, fd_grad,
                      max_rel_err)
from latentad import ops
from latentad.errors import NumericError, ShapeError


class TestConvTransposeForward:
    def test_output_length_formula(self):
        # L=4, K=4, stride=2, padding=1 -> L_out = 8
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 4))
        k = rng.standard_normal((3, 2, 4))
        out = ops.conv1d_transpose_forward(x, k, np.zeros(2), stride=2, padding=1)
        assert out.shape == (2, 8)

    def test_matches_direct_sum_oracle(self):
        rng = np.random.default_rng(1)
        for stride, padding, width in [(1, 0, 4), (2, 1, 4), (2, 0, 3), (3, 2, 5)]:
            x = rng.standard_normal((2, 5))
            k = rng.standard_normal((2, 3, width))
            b = rng.standard_normal(3)
            got = ops.conv1d_transpose_forward(x, k, b, stride, padding)
            want = conv1d_transpose_direct(x, k, b, stride, padding)
            assert np.allclose(got, want, atol=1e-12)

    def test_zero_input_gives_constant_bias(self):
        b = np.array([1.5, -2.0])
        out = ops.conv1d_transpose_forward(np.zeros((3, 6)), np.ones((3, 2, 4)), b, 2, 1)
        assert np.allclose(out, b[:, None])

    def test_identity_kernel(self):
        x = np.arange(7.0).reshape(1, 7)
        out = ops.conv1d_transpose_forward(x, np.ones((1, 1, 1)), np.zeros(1), 1, 0)
        assert np.array_equal(out, x)

    def test_channel_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 5\).*\(3, 2, 4\)"):
            ops.conv1d_transpose_forward(np.zeros((2, 5)), np.zeros((3, 2, 4)), np.zeros(2))

    def test_adjoint_of_strided_convolution(self):
        # <conv_transpose(x), y> == <x, conv(y)> for random x, y
        rng = np.random.default_rng(2)
        for stride, padding in [(1, 0), (2, 1), (3, 1)]:
            x = rng.standard_normal((2, 6))
            k = rng.standard_normal((2, 4, 4))
            y_len = ops.conv_transpose_length(6, 4, stride, padding)
            y = rng.standard_normal((4, y_len))
            lhs = float(np.sum(ops.conv1d_transpose_forward(x, k, np.zeros(4), stride, padding) * y))
            rhs = float(np.sum(x * conv1d_strided_direct(y, k, stride, padding)))
            assert abs(lhs - rhs) < 1e-10

    def test_pure_and_deterministic(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 5))
        k = rng.standard_normal((2, 3, 4))
        b = rng.standard_normal(3)
        x0, k0 = x.copy(), k.copy()
        first = ops.conv1d_transpose_forward(x, k, b, 2, 1)
        second = ops.conv1d_transpose_forward(x, k, b, 2, 1)
        assert np.array_equal(first, second)
        assert np.array_equal(x, x0) and np.array_equal(k, k0)


class TestConvTransposeBackward:
    def test_zero_grad_output(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 3))
        k = rng.standard_normal((2, 2, 4))
        out_len = ops.conv_transpose_length(3, 4, 2, 1)
        lg = ops.conv1d_transpose_backward(x, k, 2, 1, np.zeros((2, out_len)))
        assert not lg.grad_input.any()
        assert not lg.grad_params[0].any() and not lg.grad_params[1].any()

    def test_identity_kernel_passes_grad_through(self):
        g = np.arange(5.0).reshape(1, 5)
        lg = ops.conv1d_transpose_backward(np.ones((1, 5)), np.ones((1, 1, 1)), 1, 0, g)
        assert np.array_equal(lg.grad_input, g)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1)])
    def test_matches_finite_differences(self, stride, padding):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3))
        k = rng.standard_normal((2, 2, 4))
        b = rng.standard_normal(2)
        out_len = ops.conv_transpose_length(3, 4, stride, padding)
        w = rng.standard_normal((2, out_len))  # random linear functional

        def loss_of_x(xv):
            return float(np.sum(w * ops.conv1d_transpose_forward(xv, k, b, stride, padding)))

        def loss_of_k(kv):
            return float(np.sum(w * ops.conv1d_transpose_forward(x, kv, b, stride, padding)))

        def loss_of_b(bv):
            return float(np.sum(w * ops.conv1d_transpose_forward(x, k, bv, stride, padding)))

        lg = ops.conv1d_transpose_backward(x, k, stride, padding, w)
        assert max_rel_err(lg.grad_input, fd_grad(loss_of_x, x)) < 1e-5
        assert max_rel_err(lg.grad_params[0], fd_grad(loss_of_k, k)) < 1e-5
        assert max_rel_err(lg.grad_params[1], fd_grad(loss_of_b, b)) < 1e-5

    def test_grad_bias_is_temporal_sum(self):
        rng = np.random.default_rng(6)
        g = rng.standard_normal((3, 8))
        lg = ops.conv1d_transpose_backward(rng.standard_normal((2, 4)),
                                           rng.standard_normal((2, 3, 4)), 2, 1, g)
        assert np.allclose(lg.grad_params[1], g.sum(axis=1))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            ops.conv1d_transpose_backward(np.zeros((2, 4)), np.zeros((2, 3, 4)), 2, 1,
                                          np.zeros((3, 5)))


class TestBatchNorm:
    def test_eval_identity_stats_is_identity(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 3, 5))
        out, _ = ops.batchnorm_forward(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3),
                                       mode="eval", eps=1e-5)
        assert np.allclose(out, x / np.sqrt(1 + 1e-5))

    def test_train_constant_input_gives_beta(self):
        beta = np.array([0.5, -1.0])
        x = np.full((3, 2, 4), 7.0)
        out, _ = ops.batchnorm_forward(x, np.ones(2), beta, np.zeros(2), np.ones(2),
                                       mode="train")
        assert np.allclose(out, beta[None, :, None])

    @pytest.mark.parametrize("axes", [(0, 2), (2,)])
    def test_backward_matches_finite_differences(self, axes):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 3, 4))
        gamma = rng.standard_normal(3)
        beta = rng.standard_normal(3)
        rm, rv = np.zeros(3), np.ones(3)
        w = rng.standard_normal(x.shape)

        def loss(xv, gv=gamma, bv=beta):
            out, _ = ops.batchnorm_forward(xv, gv, bv, rm, rv, mode="train", axes=axes)
            return float(np.sum(w * out))

        _, cache = ops.batchnorm_forward(x, gamma, beta, rm, rv, mode="train", axes=axes)
        lg = ops.batchnorm_backward(w, cache)
        assert max_rel_err(lg.grad_input, fd_grad(loss, x)) < 1e-4
        assert max_rel_err(lg.grad_params[0], fd_grad(lambda gv: loss(x, gv=gv), gamma)) < 1e-4
        assert max_rel_err(lg.grad_params[1], fd_grad(lambda bv: loss(x, bv=bv), beta)) < 1e-4

    def test_eval_backward_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((1, 2, 4))
        gamma, beta = rng.standard_normal(2), rng.standard_normal(2)
        rm, rv = rng.standard_normal(2), rng.uniform(0.5, 2.0, 2)
        w = rng.standard_normal(x.shape)

        def loss(xv):
            out, _ = ops.batchnorm_forward(xv, gamma, beta, rm, rv, mode="eval")
            return float(np.sum(w * out))

        _, cache = ops.batchnorm_forward(x, gamma, beta, rm, rv, mode="eval")
        lg = ops.batchnorm_backward(w, cache)
        assert max_rel_err(lg.grad_input, fd_grad(loss, x)) < 1e-6

    def test_running_stats_ema(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((4, 2, 6))
        rm, rv = np.array([1.0, -1.0]), np.array([2.0, 0.5])
        _, cache = ops.batchnorm_forward(x, np.ones(2), np.zeros(2), rm, rv,
                                         mode="train", momentum=0.1)
        want_m = 0.9 * rm + 0.1 * x.mean(axis=(0, 2))
        want_v = 0.9 * rv + 0.1 * x.var(axis=(0, 2))
        assert np.allclose(cache.new_running_mean, want_m)
        assert np.allclose(cache.new_running_var, want_v)
        assert np.array_equal(rm, [1.0, -1.0])  # inputs untouched

    def test_per_sample_axes_equals_batch_of_one(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((3, 2, 5))
        args = (np.ones(2), np.zeros(2), np.zeros(2), np.ones(2))
        batched, _ = ops.batchnorm_forward(x, *args, mode="train", axes=(2,))
        for b in range(3):
            single, _ = ops.batchnorm_forward(x[b : b + 1], *args, mode="train", axes=(0, 2))
            assert np.allclose(batched[b], single[0])


class TestRelu:
    def test_basic(self):
        assert np.array_equal(ops.relu_forward(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_all_positive_is_identity(self):
        x = np.array([0.5, 3.0, 1e-9])
        assert np.array_equal(ops.relu_forward(x), x)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal(40) + 0.05  # keep clear of the kink
        w = rng.standard_normal(40)
        got = ops.relu_backward(x, w)
        want = fd_grad(lambda xv: float(np.sum(w * ops.relu_forward(xv))), x)
        assert max_rel_err(got, want) < 1e-6

    def test_masks_nonpositive(self):
        x = np.array([-2.0, 0.0, 3.0])
        g = np.array([1.0, 1.0, 1.0])
        assert np.array_equal(ops.relu_backward(x, g), [0.0, 0.0, 1.0])


class TestAdam:
    def _scalar_state(self):
        params = {"w": np.array([1.0])}
        return params, ops.adam_init(params)

    def test_zero_grad_keeps_params(self):
        params, state = self._scalar_state()
        new_params, new_state = ops.adam_step(params, {"w": np.zeros(1)}, state, lr=0.1)
        assert np.array_equal(new_params["w"], params["w"])
        assert new_state.step_count == 1

    def test_first_step_closed_form(self):
        params, state = self._scalar_state()
        new_params, _ = ops.adam_step(params, {"w": np.ones(1)}, state, lr=1e-3)
        want = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8))
        assert abs(new_params["w"][0] - want) < 1e-15

    def test_two_identical_steps_closed_form(self):
        # with g = 1 twice, bias correction keeps m_hat = v_hat = 1 exactly
        params, state = self._scalar_state()
        p1, state = ops.adam_step(params, {"w": np.ones(1)}, state, lr=1e-3)
        p2, state = ops.adam_step(p1, {"w": np.ones(1)}, state, lr=1e-3)
        step = 1e-3 * (1.0 / (1.0 + 1e-8))
        assert abs(p2["w"][0] - (1.0 - 2 * step)) < 1e-12
        assert state.step_count == 2

    def test_nonfinite_grad_names_parameter(self):
        params, state = self._scalar_state()
        with pytest.raises(NumericError, match="'w'"):
            ops.adam_step(params, {"w": np.array([np.nan])}, state, lr=0.1)

    def test_moment_shapes_checked(self):
        params, state = self._scalar_state()
        with pytest.raises(ShapeError):
            ops.adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)

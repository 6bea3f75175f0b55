import math

import numpy as np
import pytest

from wignet import activations as A
from wignet import tensor as T
from wignet.certify import (
    finite_diff_grad,
    grad_rel_error,
    negative_relu_sup,
    relu_limit_sup,
    run_equiv_check,
    run_gradcheck,
)
from wignet.errors import ShapeError
from wignet.init import gate_identity, gate_delta_kernel
from wignet.tensor import Tensor


def dense_params(wg, bg):
    return A.WiGDenseParams(Tensor(np.asarray(wg, dtype=np.float64)),
                            Tensor(np.asarray(bg, dtype=np.float64)))


class TestScalarWig:
    def test_gain_zero_is_half_x(self):
        for x in (-3.0, -0.7, 0.0, 1.3, 6.0):
            assert A.scalar_wig(x, 0.0, 0.0) == x * 0.5

    def test_gain_one_matches_sigmoid_weighting(self):
        # 1/(1+e^-1) evaluated directly
        assert A.scalar_wig(1.0, 1.0, 0.0) == pytest.approx(0.7310585786300049, abs=1e-12)

    def test_large_gain_tracks_relu(self):
        xs = np.linspace(-6, 6, 5001)
        worst = max(abs(A.scalar_wig(x, 50.0, 0.0) - max(x, 0.0)) for x in xs)
        assert worst <= 0.006

    def test_large_negative_gain_tracks_negative_relu(self):
        assert A.scalar_wig(-1.0, -50.0, 0.0) == pytest.approx(-1.0, abs=1e-6)
        assert A.scalar_wig(1.0, -50.0, 0.0) == pytest.approx(0.0, abs=1e-6)

    def test_derivative_matches_finite_difference(self):
        h = 1e-6
        for w, b in [(0.5, 0.0), (10.0, -4.0), (-3.0, 1.0)]:
            for x in np.linspace(-5, 5, 41):
                fd = (A.scalar_wig(x + h, w, b) - A.scalar_wig(x - h, w, b)) / (2 * h)
                assert A.scalar_wig_derivative(x, w, b) == pytest.approx(fd, abs=1e-8)


class TestWiGDense:
    def test_zero_input_gives_zero_output(self, rng):
        p = dense_params(rng.standard_normal((4, 4)), rng.standard_normal(4))
        out = A.wig_dense_forward(Tensor(np.zeros(4)), p)
        assert np.array_equal(out.data, np.zeros(4))

    def test_unit_case_sigmoid_zero(self):
        p = dense_params([[0.0]], [0.0])
        out = A.wig_dense_forward(Tensor([1.0]), p)
        assert out.data[0] == 0.5

    def test_two_sigma_two(self):
        # 2*sigmoid(2) evaluated directly
        p = dense_params([[1.0]], [0.0])
        out = A.wig_dense_forward(Tensor([2.0]), p)
        assert out.data[0] == pytest.approx(1.7615941559557646, abs=1e-10)

    def test_batched_rows_share_parameters(self, rng):
        p = dense_params(rng.standard_normal((3, 3)), rng.standard_normal(3))
        xs = rng.standard_normal((5, 3))
        batched = A.wig_dense_forward(Tensor(xs), p).data
        for i in range(5):
            row = A.wig_dense_forward(Tensor(xs[i]), p).data
            assert np.allclose(batched[i], row, atol=1e-15)

    def test_dimension_mismatch_rejected(self, rng):
        p = dense_params(np.eye(3), np.zeros(3))
        with pytest.raises(ShapeError):
            A.wig_dense_forward(Tensor(np.zeros(4)), p)


class TestWiGDenseJacobian:
    def test_at_zero_input_jacobian_is_diag_sigma_bias(self, rng):
        bg = rng.standard_normal(4)
        p = dense_params(rng.standard_normal((4, 4)), bg)
        jac = A.wig_dense_jacobian(np.zeros(4), p)
        assert np.allclose(jac, np.diag(T.sigmoid_array(bg)), atol=1e-15)

    def test_zero_gate_weight_gives_constant_gate(self, rng):
        bg = rng.standard_normal(3)
        p = dense_params(np.zeros((3, 3)), bg)
        for _ in range(3):
            jac = A.wig_dense_jacobian(rng.standard_normal(3), p)
            assert np.allclose(jac, np.diag(T.sigmoid_array(bg)), atol=1e-15)

    def test_random_instance_matches_finite_differences(self, rng):
        n = 4
        p = dense_params(rng.standard_normal((n, n)), rng.standard_normal(n))
        x = rng.uniform(-2, 2, size=n)
        jac = A.wig_dense_jacobian(x, p)
        for i in range(n):
            fd = finite_diff_grad(
                lambda v: float(A.wig_dense_forward(Tensor(v), p).data[i]), x)
            assert grad_rel_error(jac[i], fd) < 1e-6

    def test_jacobian_matches_tape(self, rng):
        n = 6
        p = dense_params(rng.standard_normal((n, n)), rng.standard_normal(n))
        x = T.parameter(rng.uniform(-2, 2, size=n))
        r = rng.standard_normal(n)
        T.tsum(T.mul(A.wig_dense_forward(x, p), Tensor(r))).backward()
        jac = A.wig_dense_jacobian(x.data, p)
        assert grad_rel_error(jac.T @ r, x.grad) < 1e-10


class TestWiGConv:
    def test_zero_map_gives_zero_map(self, rng):
        k, b = gate_delta_kernel(2, 3, 1.0, np.float64)
        p = A.WiGConvParams(Tensor(k), Tensor(b))
        out = A.wig_conv_forward(Tensor(np.zeros((2, 4, 4))), p)
        assert np.array_equal(out.data, np.zeros((2, 4, 4)))

    def test_1x1_gate_reduces_to_scalar_wig(self, rng):
        w, b = 1.7, -0.4
        p = A.WiGConvParams(Tensor(np.full((1, 1, 1, 1), w)), Tensor(np.array([b])))
        x = rng.standard_normal((1, 5, 5))
        out = A.wig_conv_forward(Tensor(x), p).data
        want = np.vectorize(lambda v: A.scalar_wig(v, w, b))(x)
        assert np.allclose(out, want, atol=1e-14)

    def test_channel_mismatch_rejected(self):
        k, b = gate_delta_kernel(2, 3, 1.0, np.float64)
        p = A.WiGConvParams(Tensor(k), Tensor(b))
        with pytest.raises(ShapeError):
            A.wig_conv_forward(Tensor(np.zeros((3, 4, 4))), p)

    def test_even_gate_kernel_rejected(self):
        with pytest.raises(ShapeError):
            A.WiGConvParams(Tensor(np.zeros((2, 2, 2, 2))), Tensor(np.zeros(2)))

    def test_random_instance_certified(self):
        res = run_gradcheck("wig-conv", seed=3, instances=3)
        assert res.passed, res.max_error


class TestFuseReparameterize:
    def test_identity_weighting_returns_gate(self, rng):
        wg = rng.standard_normal((4, 4))
        p = dense_params(wg, np.zeros(4))
        _, v = A.fuse_reparameterize(Tensor(np.eye(4)), p)
        assert np.allclose(v.data, wg, atol=1e-15)

    def test_identity_gate_returns_weighting(self, rng):
        w = rng.standard_normal((4, 4))
        p = dense_params(np.eye(4), np.zeros(4))
        _, v = A.fuse_reparameterize(Tensor(w), p)
        assert np.allclose(v.data, w, atol=1e-15)

    def test_composed_and_fused_forms_agree(self, rng):
        n = 8
        w = Tensor(rng.standard_normal((n, n)) / np.sqrt(n))
        p = dense_params(rng.standard_normal((n, n)) / np.sqrt(n), np.zeros(n))
        _, v = A.fuse_reparameterize(w, p)
        for _ in range(100):
            x = Tensor(rng.uniform(-1, 1, size=n))
            wx = T.matmul(w, x)
            composed = A.wig_dense_forward(wx, p).data
            fused = T.mul(wx, T.sigmoid(T.matmul(v, x))).data
            denom = np.maximum(np.maximum(np.abs(composed), np.abs(fused)), 1e-30)
            assert float((np.abs(composed - fused) / denom).max()) < 1e-12

    def test_nonzero_gate_bias_rejected(self, rng):
        p = dense_params(np.eye(3), np.array([0.0, 0.1, 0.0]))
        with pytest.raises(ValueError):
            A.fuse_reparameterize(Tensor(np.eye(3)), p)

    def test_non_square_rejected(self, rng):
        p = dense_params(np.eye(3), np.zeros(3))
        with pytest.raises(ShapeError):
            A.fuse_reparameterize(Tensor(np.ones((3, 4))), p)


class TestBaselines:
    def test_relu_values(self):
        out = A.baseline_forward("relu", Tensor([-3.0, 3.0]))
        assert np.array_equal(out.data, [0.0, 3.0])

    def test_swish_beta_one_equals_sil_bit_exact(self, rng):
        x = rng.standard_normal(100)
        sil = A.baseline_forward("sil", Tensor(x)).data
        sw = A.make_activation("swish", beta=1.0)
        sw.build((100,), None, rng, np.float64)
        swish = sw.forward(Tensor(x)).data
        assert np.array_equal(sil, swish)

    def test_softplus_at_zero_is_ln_two(self):
        out = A.baseline_forward("softplus", Tensor([0.0]))
        assert out.data[0] == pytest.approx(math.log(2.0), abs=1e-12)

    def test_leaky_relu_default_slope(self):
        out = A.baseline_forward("leaky_relu", Tensor([-2.0, 2.0]))
        assert np.allclose(out.data, [-0.02, 2.0])

    def test_elu_negative_branch(self):
        out = A.baseline_forward("elu", Tensor([-1.0]))
        assert out.data[0] == pytest.approx(math.expm1(-1.0), abs=1e-12)

    def test_selu_constants(self):
        out = A.baseline_forward("selu", Tensor([1.0, -1.0]))
        assert out.data[0] == pytest.approx(1.0507009873554805, rel=1e-12)
        assert out.data[1] == pytest.approx(1.0507009873554805 * 1.6732632423543773
                                            * math.expm1(-1.0), rel=1e-10)

    def test_prelu_trainable_per_channel(self, rng):
        layer = A.make_activation("prelu")
        layer.build((3,), None, rng, np.float64)
        x = T.parameter(np.array([-2.0, -1.0, 2.0]))
        T.tsum(layer.forward(x)).backward()
        assert np.allclose(layer.alpha.grad, [-2.0, -1.0, 0.0])
        assert np.allclose(x.grad, [0.25, 0.25, 1.0])

    def test_swish_beta_participates_in_backward(self, rng):
        layer = A.make_activation("swish")
        layer.build((4,), None, rng, np.float64)
        x = T.parameter(rng.standard_normal(4))
        T.tsum(layer.forward(x)).backward()
        assert layer.beta.grad is not None
        assert abs(layer.beta.grad[0]) > 0

    def test_registry_is_complete(self):
        assert set(A.ACTIVATIONS) == {
            "relu", "leaky_relu", "elu", "selu", "softplus", "sil",
            "prelu", "swish", "wig",
        }

    def test_unknown_name_rejected(self):
        with pytest.raises(KeyError):
            A.make_activation("gelu")


class TestSpecialCaseTower:
    def test_wig_diag_equals_swish_on_1000_points(self, rng):
        xs = rng.uniform(-6, 6, size=1000)
        for s in (0.5, 1.0, 2.0, 10.0):
            wg, bg = gate_identity(1000, s, np.float64)
            p = A.WiGDenseParams(Tensor(wg), Tensor(bg))
            wig = A.wig_dense_forward(Tensor(xs), p).data
            swish = xs * T.sigmoid_array(s * xs)
            assert np.abs(wig - swish).max() < 1e-12

    def test_relu_limit_bound_family(self):
        for s in (10.0, 50.0, 200.0):
            assert relu_limit_sup(s) <= 0.2786 / s

    def test_negative_relu_limit(self):
        assert negative_relu_sup(50.0) <= 0.006

    def test_full_tower_passes(self):
        assert all(line.passed for line in run_equiv_check(seed=0))

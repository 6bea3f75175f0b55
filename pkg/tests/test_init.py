import numpy as np
import pytest

from wignet import activations as A
from wignet import tensor as T
from wignet.init import (
    InitPolicy,
    gate_delta_kernel,
    gate_identity,
    he_std,
    init_gate,
    init_weights,
)
from wignet.layers import LayerSpec, NetworkSpec, build_network
from wignet.tensor import Tensor


class TestPolicy:
    def test_scratch_pins_scale_to_one(self):
        InitPolicy("scratch", 1.0)
        with pytest.raises(ValueError):
            InitPolicy("scratch", 2.0)

    def test_transfer_requires_scale_at_least_one(self):
        InitPolicy("transfer", 50.0)
        with pytest.raises(ValueError):
            InitPolicy("transfer", 0.5)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            InitPolicy("warm", 1.0)


class TestInitWeights:
    def test_moments_concentrate(self):
        rng = np.random.Generator(np.random.PCG64(0))
        fan_in = 64
        draws = init_weights((1000, 1000), fan_in, rng, np.float64)
        std = he_std(fan_in)
        assert abs(draws.mean()) < 3 * std / np.sqrt(draws.size)
        assert abs(draws.std() / std - 1.0) < 0.01

    def test_same_seed_identical(self):
        a = init_weights((8, 8), 8, np.random.Generator(np.random.PCG64(1)))
        b = init_weights((8, 8), 8, np.random.Generator(np.random.PCG64(1)))
        assert np.array_equal(a, b)

    def test_bad_fan_in_rejected(self):
        with pytest.raises(ValueError):
            init_weights((2, 2), 0, np.random.default_rng(0))


class TestGateInit:
    def test_scale_one_dense_equals_sil(self, rng):
        n = 16
        wg, bg = gate_identity(n, 1.0, np.float64)
        p = A.WiGDenseParams(Tensor(wg), Tensor(bg))
        x = rng.uniform(-6, 6, size=n)
        wig = A.wig_dense_forward(Tensor(x), p).data
        sil = x * T.sigmoid_array(x)
        assert np.abs(wig - sil).max() < 1e-12

    def test_scale_fifty_tracks_relu(self, rng):
        n = 512
        wg, bg = gate_identity(n, 50.0, np.float64)
        p = A.WiGDenseParams(Tensor(wg), Tensor(bg))
        x = np.linspace(-6, 6, n)
        wig = A.wig_dense_forward(Tensor(x), p).data
        assert np.abs(wig - np.maximum(x, 0)).max() <= 0.006

    def test_conv_delta_kernel_at_one_gives_x_sigmoid_x(self, rng):
        k, b = gate_delta_kernel(3, 3, 1.0, np.float64)
        p = A.WiGConvParams(Tensor(k), Tensor(b))
        x = rng.standard_normal((3, 6, 6))
        out = A.wig_conv_forward(Tensor(x), p).data
        assert np.allclose(out, x * T.sigmoid_array(x), atol=1e-14)

    def test_init_gate_replaces_dense_params(self, rng):
        p = A.WiGDenseParams(T.parameter(rng.standard_normal((4, 4))),
                             T.parameter(rng.standard_normal(4)))
        q = init_gate(p, 2.0)
        assert np.array_equal(q.gate_weight.data, 2.0 * np.eye(4, dtype=np.float32))
        assert np.array_equal(q.gate_bias.data, np.zeros(4))

    def test_init_gate_replaces_conv_params(self):
        k, b = gate_delta_kernel(2, 3, 1.0, np.float32)
        p = A.WiGConvParams(T.parameter(k), T.parameter(b))
        q = init_gate(p, 3.0)
        assert q.gate_kernel.data[0, 0, 1, 1] == 3.0
        assert q.gate_kernel.data[0, 1, 1, 1] == 0.0

    def test_init_gate_requires_positive_scale(self):
        p = A.WiGDenseParams(T.parameter(np.eye(2)), T.parameter(np.zeros(2)))
        with pytest.raises(ValueError):
            init_gate(p, -1.0)


def _dense_stack(activation, units=(12, 12, 5), input_shape=(8,), precision="f64"):
    layers = []
    for u in units[:-1]:
        layers.append(LayerSpec("dense", {"units": u}))
        layers.append(LayerSpec("activation", {"name": activation}))
    layers.append(LayerSpec("dense", {"units": units[-1]}))
    return NetworkSpec(tuple(layers), input_shape, "mse", precision)


class TestNetworkLevelEquivalences:
    def test_fresh_scratch_wig_network_equals_sil_network(self, rng):
        wig_net = build_network(_dense_stack("wig"), seed=9,
                                policy=InitPolicy("scratch", 1.0))
        sil_net = build_network(_dense_stack("sil"), seed=9)
        x = rng.uniform(-2, 2, size=(16, 8))
        a = wig_net.forward(x).data
        b = sil_net.forward(x).data
        scale = np.maximum(np.abs(b), 1.0)
        assert (np.abs(a - b) / scale).max() < 1e-12

    def test_transfer_at_fifty_preserves_trained_relu_logits(self, rng):
        # train a small ReLU classifier briefly, then swap every ReLU for a
        # transfer-initialized gate and compare held-out logits
        from wignet.metrics import cross_entropy
        from wignet.optim import Adamax

        relu_net = build_network(_dense_stack("relu"), seed=4)
        opt = Adamax(relu_net.params(), lr=0.01)
        xs = rng.uniform(-1, 1, size=(64, 8))
        ys = rng.integers(0, 5, size=64)
        for _ in range(60):
            loss = cross_entropy(relu_net.forward(xs, train=True), ys)
            loss.backward()
            opt.step()
            relu_net.zero_grad()

        wig_net = build_network(_dense_stack("wig"), seed=4,
                                policy=InitPolicy("transfer", 50.0))
        trained = dict(relu_net.params())
        for name, p in wig_net.params():
            if "gate" not in name:
                p.data = trained[name].data

        held_out = rng.uniform(-1, 1, size=(32, 8))
        a = relu_net.forward(held_out).data
        b = wig_net.forward(held_out).data
        assert np.abs(a - b).max() <= 0.05

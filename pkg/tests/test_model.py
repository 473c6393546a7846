import numpy as np
import pytest

from fedlora import model
from fedlora.adapter import LoraAdapter, init_adapter
from fedlora.check import central_difference
from fedlora.linalg import ContractViolation, RngStream


def _layer(d, k, r, gamma, activation, seed):
    gen = np.random.default_rng(seed)
    ad = LoraAdapter(
        A=gen.standard_normal((r, k)),
        B=gen.standard_normal((d, r)),
        rank=r,
        sigma_a=1.0,
        gamma=gamma,
    )
    return model.AdaptedLayer(w0=gen.standard_normal((d, k)), adapter=ad, activation=activation)


def _network(dims, activation, loss_kind, seed=0, gamma=0.7):
    layers = []
    for i, (d, k) in enumerate(dims):
        act = activation if i < len(dims) - 1 else model.IDENTITY
        layers.append(_layer(d, k, min(d, k, 3), gamma, act, seed + i))
    return model.AdaptedNetwork(layers=layers, loss_kind=loss_kind)


class TestConstruction:
    def test_width_chaining_enforced(self):
        with pytest.raises(ContractViolation):
            _network([(4, 3), (5, 6)], model.TANH, model.SQUARED_ERROR)

    def test_empty_network_rejected(self):
        with pytest.raises(ContractViolation):
            model.AdaptedNetwork(layers=[], loss_kind=model.SQUARED_ERROR)

    def test_unknown_activation_rejected(self):
        with pytest.raises(ContractViolation):
            _layer(3, 3, 2, 1.0, "sigmoid", 0)

    def test_base_adapter_shape_agreement(self):
        gen = np.random.default_rng(1)
        ad = LoraAdapter(
            A=gen.standard_normal((2, 4)), B=gen.standard_normal((3, 2)),
            rank=2, sigma_a=1.0, gamma=1.0,
        )
        with pytest.raises(ContractViolation):
            model.AdaptedLayer(w0=gen.standard_normal((3, 5)), adapter=ad)


class TestForward:
    def test_identity_single_layer_is_linear_map(self):
        net = _network([(4, 3)], model.IDENTITY, model.SQUARED_ERROR, seed=2)
        layer = net.layers[0]
        x = np.random.default_rng(3).standard_normal((3, 5))
        out, trace = model.forward(net, x)
        merged = layer.w0 + layer.adapter.gamma * layer.adapter.B @ layer.adapter.A
        assert np.abs(out - merged @ x).max() < 1e-12
        assert len(trace.inputs) == 1
        assert np.array_equal(trace.inputs[0], x)

    def test_tanh_bounds_output(self):
        net = _network([(4, 4), (4, 4)], model.TANH, model.SQUARED_ERROR, seed=4)
        x = 10.0 * np.random.default_rng(5).standard_normal((4, 8))
        _, trace = model.forward(net, x)
        # hidden activation (input to layer 2) is tanh-bounded
        assert np.abs(trace.inputs[1]).max() <= 1.0

    def test_relu_nonnegative_hidden(self):
        net = _network([(4, 4), (4, 4)], model.RELU, model.SQUARED_ERROR, seed=6)
        x = np.random.default_rng(7).standard_normal((4, 8))
        _, trace = model.forward(net, x)
        assert trace.inputs[1].min() >= 0.0

    def test_fresh_adapters_have_zero_contribution(self):
        layers = []
        for i, (d, k) in enumerate([(5, 4), (3, 5)]):
            ad = init_adapter(d, k, 2, 1.0, RngStream(8, (i,)))
            ad.gamma = 2.0
            layers.append(model.AdaptedLayer(
                w0=np.random.default_rng(9 + i).standard_normal((d, k)),
                adapter=ad, activation=model.IDENTITY,
            ))
        net = model.AdaptedNetwork(layers=layers, loss_kind=model.SQUARED_ERROR)
        _, trace = model.forward(net, np.ones((4, 3)))
        for c in trace.contributions:
            assert not c.any()

    def test_input_width_checked(self):
        net = _network([(4, 3)], model.IDENTITY, model.SQUARED_ERROR)
        with pytest.raises(ContractViolation):
            model.forward(net, np.ones((5, 2)))


class TestLoss:
    def test_squared_error_zero_at_target(self):
        out = np.random.default_rng(0).standard_normal((3, 4))
        value, v = model.loss(out, out.copy(), model.SQUARED_ERROR)
        assert value == 0.0
        assert not v.any()

    def test_squared_error_scalar_oracle(self):
        # 0.5 * (2 - 5)^2 / 1 = 4.5, gradient (2 - 5) / 1 = -3
        value, v = model.loss(np.array([[2.0]]), np.array([[5.0]]), model.SQUARED_ERROR)
        assert value == pytest.approx(4.5)
        assert v[0, 0] == pytest.approx(-3.0)

    def test_squared_error_batch_mean(self):
        gen = np.random.default_rng(1)
        out = gen.standard_normal((3, 1))
        y = gen.standard_normal((3, 1))
        single, _ = model.loss(out, y, model.SQUARED_ERROR)
        stacked, _ = model.loss(np.hstack([out, out]), np.hstack([y, y]), model.SQUARED_ERROR)
        assert stacked == pytest.approx(single)

    def test_cross_entropy_uniform_logits(self):
        value, _ = model.loss(np.zeros((4, 3)), np.array([0, 1, 2]), model.CROSS_ENTROPY)
        assert value == pytest.approx(np.log(4.0))

    def test_cross_entropy_gradient_sums_to_zero_per_column(self):
        gen = np.random.default_rng(2)
        out = gen.standard_normal((5, 6))
        labels = gen.integers(0, 5, 6)
        _, v = model.loss(out, labels, model.CROSS_ENTROPY)
        assert np.abs(v.sum(axis=0)).max() < 1e-12

    def test_cross_entropy_shift_invariance(self):
        gen = np.random.default_rng(3)
        out = gen.standard_normal((4, 5))
        labels = gen.integers(0, 4, 5)
        a, _ = model.loss(out, labels, model.CROSS_ENTROPY)
        b, _ = model.loss(out + 100.0, labels, model.CROSS_ENTROPY)
        assert a == pytest.approx(b, rel=1e-9)

    def test_cross_entropy_label_range_checked(self):
        with pytest.raises(ContractViolation):
            model.loss(np.zeros((3, 2)), np.array([0, 3]), model.CROSS_ENTROPY)

    def test_squared_error_shape_checked(self):
        with pytest.raises(ContractViolation):
            model.loss(np.zeros((3, 2)), np.zeros((2, 3)), model.SQUARED_ERROR)


class TestBackward:
    @pytest.mark.parametrize("activation", [model.IDENTITY, model.TANH])
    @pytest.mark.parametrize("loss_kind", [model.SQUARED_ERROR, model.CROSS_ENTROPY])
    def test_finite_differences_two_layers(self, activation, loss_kind):
        gen = np.random.default_rng(10)
        net = _network([(4, 3), (5, 4)], activation, loss_kind, seed=11)
        x = gen.standard_normal((3, 2))
        if loss_kind == model.SQUARED_ERROR:
            y = gen.standard_normal((5, 2))
        else:
            y = gen.integers(0, 5, 2)

        def scalar_loss():
            out, _ = model.forward(net, x)
            return model.loss(out, y, loss_kind)[0]

        out, trace = model.forward(net, x)
        _, v = model.loss(out, y, loss_kind)
        grads = model.backward(net, trace, v)
        for layer, g in zip(net.layers, grads):
            for analytic, m in ((g.grad_A, layer.adapter.A), (g.grad_B, layer.adapter.B)):
                numeric = central_difference(scalar_loss, m)
                scale = max(np.abs(numeric).max(), 1e-8)
                assert np.abs(analytic - numeric).max() / scale < 1e-5

    def test_relu_dead_units_get_zero_gradient(self):
        # a layer whose pre-activations are all negative blocks the gradient
        net = _network([(3, 3), (3, 3)], model.RELU, model.SQUARED_ERROR, seed=12)
        net.layers[0].w0 = -10.0 * np.eye(3)
        net.layers[0].adapter.B[:] = 0.0
        x = np.abs(np.random.default_rng(13).standard_normal((3, 2)))
        out, trace = model.forward(net, x)
        _, v = model.loss(out, np.ones_like(out), model.SQUARED_ERROR)
        grads = model.backward(net, trace, v)
        assert not grads[0].grad_B.any()
        assert not grads[0].grad_A.any()

    def test_stale_trace_rejected(self):
        net = _network([(3, 3)], model.IDENTITY, model.SQUARED_ERROR, seed=14)
        out, trace = model.forward(net, np.ones((3, 1)))
        with pytest.raises(ContractViolation):
            model.backward(net, trace, np.ones((4, 1)))


class TestPerplexityAnalog:
    def test_cross_entropy_exponentiates(self):
        assert model.perplexity_analog(np.log(7.0), model.CROSS_ENTROPY) == pytest.approx(7.0)

    def test_squared_error_passthrough(self):
        assert model.perplexity_analog(3.25, model.SQUARED_ERROR) == 3.25

    def test_nonfinite_rejected(self):
        with pytest.raises(ContractViolation):
            model.perplexity_analog(float("nan"), model.SQUARED_ERROR)

import numpy as np
import pytest

from selfless.importance import (
    NeuronImportance,
    ParamImportance,
    accumulate_importance,
    ewc_fisher_importance,
    mas_parameter_importance,
    neuron_importance,
    parameter_importance,
)
from selfless.nn import DenseLayer, Mlp, ShapeError, forward, softmax_cross_entropy


@pytest.fixture
def model():
    m = Mlp.init([4, 6, 3], rng=5)
    m.layers[0].biases[...] = 0.2
    return m


class TestMas:
    def test_zero_function(self, rng):
        m = Mlp.init([4, 5, 3], rng=0)
        m.layers[-1].weights[...] = 0.0
        omega = mas_parameter_importance(m, rng.random((10, 4)))
        assert not any(a.any() for a in omega.as_list())

    @pytest.mark.parametrize("w", [-1.5, 0.3, 2.0])
    def test_single_linear_neuron(self, w):
        m = Mlp([DenseLayer([[w]], [0.0])])
        omega = mas_parameter_importance(m, np.array([[2.0]]))
        # g = y^2 / 2 with y = w x, so dg/dw = y x
        assert omega.weights[0][0, 0] == pytest.approx(abs(w) * 4)
        assert omega.biases[0][0] == pytest.approx(abs(w * 2))

    def test_label_free(self, model, rng):
        x = rng.random((20, 4))
        y = rng.integers(0, 3, 20)
        a = parameter_importance(model, x, y, "mas")
        b = parameter_importance(model, x, rng.permutation(y), "mas")
        for u, v in zip(a.as_list(), b.as_list()):
            np.testing.assert_array_equal(u, v)

    def test_matches_per_example_loop(self, model, rng):
        x = rng.random((7, 4))
        omega = mas_parameter_importance(model, x, batch_size=3)
        w0 = model.layers[0].weights
        expected = np.zeros_like(w0)
        step = 1e-6
        for m in range(7):
            for idx in np.ndindex(*w0.shape):
                orig = w0[idx]
                w0[idx] = orig + step
                up = 0.5 * (forward(model, x[m : m + 1]).logits ** 2).sum()
                w0[idx] = orig - step
                down = 0.5 * (forward(model, x[m : m + 1]).logits ** 2).sum()
                w0[idx] = orig
                expected[idx] += abs(up - down) / (2 * step) / 7
        np.testing.assert_allclose(omega.weights[0], expected, rtol=1e-5, atol=1e-9)

    def test_doubling_logits(self, rng):
        m = Mlp([DenseLayer(rng.standard_normal((3, 4)), rng.standard_normal(3))])
        x = rng.random((5, 4))
        base = mas_parameter_importance(m, x)
        m2 = Mlp([DenseLayer(2 * m.layers[0].weights, 2 * m.layers[0].biases)])
        assert 0.5 * (forward(m2, x).logits ** 2).sum() == pytest.approx(4 * 0.5 * (forward(m, x).logits ** 2).sum())
        # one layer: dg/dW = z x^T, so doubling z doubles every sensitivity
        np.testing.assert_allclose(mas_parameter_importance(m2, x).weights[0], 2 * base.weights[0])

    def test_empty_data(self, model):
        with pytest.raises(ValueError):
            mas_parameter_importance(model, np.zeros((0, 4)))


class TestEwc:
    def test_confident_model(self):
        m = Mlp([DenseLayer([[50.0, 0.0], [-50.0, 0.0]], [0.0, 0.0])])
        f = ewc_fisher_importance(m, np.array([[1.0, 0.5]]), np.array([0]))
        assert max(a.max() for a in f.as_list()) < 1e-20

    def test_non_negative(self, model, rng):
        f = ewc_fisher_importance(model, rng.random((15, 4)), rng.integers(0, 3, 15))
        assert all((a >= 0).all() for a in f.as_list())

    def test_linear_model_matches_squared_gradient(self, rng):
        m = Mlp([DenseLayer(rng.standard_normal((2, 3)), rng.standard_normal(2))])
        x, y = rng.random((1, 3)), np.array([1])
        f = ewc_fisher_importance(m, x, y)
        w = m.layers[0].weights
        g = np.zeros_like(w)
        for idx in np.ndindex(*w.shape):
            orig = w[idx]
            w[idx] = orig + 1e-6
            up = softmax_cross_entropy(forward(m, x).logits, y)[0]
            w[idx] = orig - 1e-6
            down = softmax_cross_entropy(forward(m, x).logits, y)[0]
            w[idx] = orig
            g[idx] = (up - down) / 2e-6
        np.testing.assert_allclose(f.weights[0], g**2, rtol=1e-6)

    def test_depends_on_labels(self, model, rng):
        x = rng.random((10, 4))
        a = ewc_fisher_importance(model, x, np.zeros(10, dtype=int))
        b = ewc_fisher_importance(model, x, np.full(10, 2))
        assert not np.allclose(a.weights[0], b.weights[0])

    def test_needs_labels(self, model, rng):
        with pytest.raises(ValueError):
            parameter_importance(model, rng.random((3, 4)), None, "ewc")


class TestNeuronImportance:
    def test_dead_path(self, model, rng):
        model.layers[1].weights[:, 2] = 0.0
        alpha = neuron_importance(model, rng.random((10, 4)), rng.integers(0, 3, 10), "loss")
        assert alpha.alpha[0][2] == 0.0
        assert (alpha.alpha[0] >= 0).all()

    @pytest.mark.parametrize("mode", ["loss", "function"])
    def test_single_hidden_neuron_finite_differences(self, mode):
        m = Mlp([DenseLayer([[0.8, -0.3]], [0.4]), DenseLayer([[1.2], [-0.7]], [0.1, 0.0])])
        x = np.array([[1.0, 0.5], [0.2, 0.9], [0.7, 0.1]])
        y = np.array([0, 1, 0])
        alpha = neuron_importance(m, x, y, mode)

        def target(row):
            logits = forward(m, x[row : row + 1]).logits
            if mode == "function":
                return 0.5 * (logits**2).sum()
            return softmax_cross_entropy(logits, y[row : row + 1])[0]

        # offsetting the bias shifts this example's pre-activation one-for-one
        b = m.layers[0].biases
        total = 0.0
        for row in range(3):
            b[0] = 0.4 + 1e-6
            up = target(row)
            b[0] = 0.4 - 1e-6
            down = target(row)
            b[0] = 0.4
            total += abs(up - down) / 2e-6
        assert alpha.alpha[0][0] == pytest.approx(total / 3, abs=1e-4)

    def test_loss_mode_needs_labels(self, model, rng):
        with pytest.raises(ValueError):
            neuron_importance(model, rng.random((3, 4)), None, "loss")

    def test_deterministic(self, model, rng):
        x = rng.random((9, 4))
        a = neuron_importance(model, x, mode="function", batch_size=4)
        b = neuron_importance(model, x, mode="function", batch_size=4)
        np.testing.assert_array_equal(a.alpha[0], b.alpha[0])


class TestAccumulate:
    def test_zero_is_identity(self, model, rng):
        new = mas_parameter_importance(model, rng.random((5, 4)))
        acc = accumulate_importance(ParamImportance.zeros(model), new)
        for a, b in zip(acc.as_list(), new.as_list()):
            np.testing.assert_array_equal(a, b)

    def test_sum(self, model):
        half = ParamImportance.zeros(model)
        half = ParamImportance([w + 0.5 for w in half.weights], [b + 0.5 for b in half.biases])
        acc = accumulate_importance(half, half)
        assert all((a == 1.0).all() for a in acc.as_list())

    def test_commutative_and_associative(self, rng):
        a, b, c = (NeuronImportance([rng.random(4), rng.random(3)]) for _ in range(3))
        ab = accumulate_importance(a, b)
        ba = accumulate_importance(b, a)
        np.testing.assert_array_equal(ab.alpha[0], ba.alpha[0])
        left = accumulate_importance(ab, c)
        right = accumulate_importance(a, accumulate_importance(b, c))
        np.testing.assert_allclose(left.alpha[1], right.alpha[1], rtol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            accumulate_importance(NeuronImportance([np.zeros(3)]), NeuronImportance([np.zeros(4)]))

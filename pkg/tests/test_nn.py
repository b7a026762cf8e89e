import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from selfless.nn import (
    Batch,
    DenseLayer,
    DivergenceError,
    Gradients,
    Mlp,
    ShapeError,
    apply_activation,
    backward,
    finite_difference_gradient,
    forward,
    max_relative_error,
    sgd_step,
    softmax_cross_entropy,
)


def _loss(model, batch):
    return softmax_cross_entropy(forward(model, batch).logits, batch.labels)[0]


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(apply_activation([[-1, 0, 2]], "relu"), [[0, 0, 2]])

    def test_maxout(self):
        np.testing.assert_array_equal(apply_activation([[4, 7, -1, -3]], "maxout", 2), [[7, -1]])

    def test_lwta(self):
        np.testing.assert_array_equal(apply_activation([[4, 7, -1, -3]], "lwta", 2), [[0, 7, -1, 0]])

    def test_lwta_tie_keeps_lowest_index(self):
        np.testing.assert_array_equal(apply_activation([[5, 5, 1, 1]], "lwta", 2), [[5, 0, 1, 0]])

    @pytest.mark.parametrize("kind", ["maxout", "lwta"])
    def test_window_must_divide_width(self, kind):
        with pytest.raises(ShapeError):
            apply_activation(np.zeros((1, 5)), kind, 2)

    @given(arrays(np.float64, (4, 6), elements=st.floats(-10, 10)))
    def test_relu_sparsity_bookkeeping(self, pre):
        post = apply_activation(pre, "relu")
        assert (post == 0).sum() == (pre <= 0).sum()
        assert (post >= 0).all()

    @given(arrays(np.float64, (3, 12), elements=st.floats(0.01, 10)), st.sampled_from([2, 3, 4, 6]))
    def test_lwta_nonzero_bound(self, pre, k):
        post = apply_activation(pre, "lwta", k)
        assert ((post != 0).sum(axis=1) <= math.ceil(12 / k)).all()


class TestMlp:
    def test_dimensions_must_chain(self):
        with pytest.raises(ShapeError):
            Mlp([DenseLayer(np.zeros((3, 2)), np.zeros(3)), DenseLayer(np.zeros((2, 4)), np.zeros(2))])

    def test_hidden_width_divisible_by_window(self):
        with pytest.raises(ShapeError):
            Mlp.init([4, 5, 2], activation="lwta", window=2)

    def test_maxout_chains_reduced_width(self):
        model = Mlp.init([4, 6, 6, 3], activation="maxout", window=3)
        assert [l.fan_in for l in model.layers] == [4, 2, 2]

    def test_init_is_seeded(self):
        a, b = Mlp.init([5, 4, 3], rng=7), Mlp.init([5, 4, 3], rng=7)
        for x, y in zip(a.params(), b.params()):
            np.testing.assert_array_equal(x, y)

    def test_init_range(self):
        model = Mlp.init([30, 20, 10], rng=0)
        assert np.abs(model.layers[0].weights).max() <= math.sqrt(6 / 50)
        assert not model.layers[0].biases.any()


class TestForward:
    def test_zero_model(self, rng):
        model = Mlp([DenseLayer(np.zeros((4, 3)), np.zeros(4)), DenseLayer(np.zeros((2, 4)), np.zeros(2))])
        rec = forward(model, rng.random((5, 3)))
        assert not rec.post[0].any()
        assert not rec.logits.any()

    def test_single_unit_relu(self):
        model = Mlp([DenseLayer([[1.0]], [0.0]), DenseLayer([[1.0]], [0.0])])
        rec = forward(model, np.array([[-2.0]]))
        assert rec.pre[0][0, 0] == -2.0
        assert rec.post[0][0, 0] == 0.0

    def test_lwta_layer(self):
        # identity first layer so pre-activations equal the input
        model = Mlp([DenseLayer(np.eye(4), np.zeros(4)), DenseLayer(np.ones((1, 4)), [0.0])], "lwta", 2)
        rec = forward(model, np.array([[3.0, 1.0, 0.0, 2.0]]))
        np.testing.assert_array_equal(rec.post[0], [[3, 0, 0, 2]])

    def test_input_width_checked(self):
        with pytest.raises(ShapeError):
            forward(Mlp.init([3, 2]), np.zeros((1, 4)))


class TestSoftmaxCrossEntropy:
    def test_uniform(self):
        loss, _ = softmax_cross_entropy(np.zeros((1, 2)), np.array([1]))
        assert loss == pytest.approx(math.log(2))

    def test_large_logits_stay_finite(self):
        loss, grad = softmax_cross_entropy(np.array([[1000.0, 0.0]]), np.array([0]))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(grad).all()

    def test_against_extended_precision(self):
        mpmath.mp.dps = 50
        expected = float(-mpmath.log(mpmath.e**2 / (mpmath.e + mpmath.e**2)))
        loss, _ = softmax_cross_entropy(np.array([[1.0, 2.0]]), np.array([1]))
        assert loss == pytest.approx(expected, abs=1e-15)
        assert loss == pytest.approx(0.3133, abs=1e-4)

    def test_gradient(self, rng):
        logits, labels = rng.standard_normal((4, 3)), np.array([0, 2, 1, 2])
        _, grad = softmax_cross_entropy(logits, labels)
        from oracles import numeric_grad

        num = numeric_grad(lambda z: softmax_cross_entropy(z, labels)[0], logits)
        np.testing.assert_allclose(grad, num, atol=1e-8)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            softmax_cross_entropy(np.zeros((1, 3)), np.array([3]))


class TestBackward:
    def test_zero_upstream(self, rng):
        model = Mlp.init([3, 4, 2], rng=0)
        rec = forward(model, rng.random((2, 3)))
        g = backward(model, rec, np.zeros((2, 2)), [np.zeros((2, 4))])
        assert not any(a.any() for a in g.as_list())

    def test_linear_chain_rule(self, rng):
        model = Mlp([DenseLayer(rng.random((2, 3)), np.zeros(2))])
        x = rng.random((4, 3))
        d = rng.standard_normal((4, 2))
        g = backward(model, forward(model, x), d)
        np.testing.assert_allclose(g.d_weights[0], d.T @ x)
        np.testing.assert_allclose(g.d_biases[0], d.sum(axis=0))

    @pytest.mark.parametrize("activation", ["relu", "lwta", "maxout"])
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, activation, seed):
        rng = np.random.default_rng(seed)
        model = Mlp.init([4, 6, 4, 3], activation, 2, rng)
        for layer in model.layers:
            layer.biases[...] = 0.1 * rng.standard_normal(layer.fan_out)
        batch = Batch(rng.random((5, 4)), rng.integers(0, 3, 5))
        rec = forward(model, batch)
        _, d_logits = softmax_cross_entropy(rec.logits, batch.labels)
        width = rec.post[0].shape[1], rec.post[1].shape[1]
        inj = [rng.standard_normal((5, width[0])), rng.standard_normal((5, width[1]))]
        analytic = backward(model, rec, d_logits, inj)

        def objective(m):
            r = forward(m, batch)
            return _loss(m, batch) + sum((g * h).sum() for g, h in zip(inj, r.post))

        numeric = finite_difference_gradient(objective, model, 1e-5)
        assert max_relative_error(analytic.as_list(), numeric.as_list()) < 1e-4

    def test_injected_shape_checked(self, rng):
        model = Mlp.init([3, 4, 2], rng=0)
        rec = forward(model, rng.random((2, 3)))
        with pytest.raises(ShapeError):
            backward(model, rec, np.zeros((2, 2)), [np.zeros((2, 5))])


class TestSgd:
    def test_zero_learning_rate(self):
        model = Mlp.init([3, 2], rng=0)
        before = [p.copy() for p in model.params()]
        sgd_step(model, Gradients.from_list([np.ones_like(p) for p in model.params()]), 0.0)
        for a, b in zip(before, model.params()):
            np.testing.assert_array_equal(a, b)

    def test_arithmetic(self):
        model = Mlp([DenseLayer([[1.0]], [1.0])])
        sgd_step(model, Gradients([np.array([[0.5]])], [np.array([0.5])]), 0.01)
        assert model.layers[0].weights[0, 0] == pytest.approx(0.995)

    def test_non_finite_gradient_rejected(self):
        model = Mlp.init([2, 2], rng=0)
        with pytest.raises(DivergenceError):
            sgd_step(model, Gradients([np.full((2, 2), np.nan)], [np.zeros(2)]), 0.1)

    def test_descends_convex_quadratic(self):
        model = Mlp([DenseLayer([[3.0, -2.0]], [1.0])])
        target = np.array([[0.5, 0.5]])

        def loss(m):
            return float(((m.layers[0].weights - target) ** 2).sum() + m.layers[0].biases[0] ** 2)

        values = []
        for _ in range(20):
            values.append(loss(model))
            w = model.layers[0]
            g = Gradients([2 * (w.weights - target)], [2 * w.biases])
            sgd_step(model, g, 0.1)
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_training_is_deterministic(self, rng):
        x, y = rng.random((8, 5)), rng.integers(0, 3, 8)

        def train():
            model = Mlp.init([5, 6, 3], rng=3)
            for _ in range(10):
                rec = forward(model, x)
                _, d = softmax_cross_entropy(rec.logits, y)
                sgd_step(model, backward(model, rec, d), 0.1)
            return model

        for a, b in zip(train().params(), train().params()):
            np.testing.assert_array_equal(a, b)


class TestFiniteDifferences:
    def test_constant_loss(self):
        g = finite_difference_gradient(lambda m: 1.0, Mlp.init([2, 2], rng=0))
        assert not any(a.any() for a in g.as_list())

    def test_quadratic(self):
        model = Mlp([DenseLayer([[3.0]], [0.0])])
        g = finite_difference_gradient(lambda m: float(m.layers[0].weights[0, 0] ** 2), model, 1e-5)
        assert g.d_weights[0][0, 0] == pytest.approx(6.0, abs=1e-6)

    def test_non_finite_loss(self):
        with pytest.raises(DivergenceError):
            finite_difference_gradient(lambda m: float("nan"), Mlp.init([1, 1], rng=0))

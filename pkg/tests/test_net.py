"""Dense-network engine tests: finite-difference and scripted oracles."""

import numpy as np
import pytest

from taskadc.net import (AdamState, DenseLayer, adam_update,
                         cross_entropy_loss, forward, init_dense, mse_loss,
                         softmax)


class TestForward:
    def test_identity_linear(self):
        layer = DenseLayer(weights=np.eye(3), bias=np.zeros(3))
        x = np.array([[1.0, -2.0, 0.5]])
        out, _ = forward([layer], x)
        np.testing.assert_array_equal(out, x)

    def test_relu(self):
        layer = DenseLayer(weights=np.eye(2), bias=np.zeros(2),
                           activation="relu")
        out, _ = forward([layer], np.array([[-1.0, 2.0]]))
        np.testing.assert_array_equal(out, [[0.0, 2.0]])

    def test_softmax_uniform(self):
        layer = DenseLayer(weights=np.zeros((4, 2)), bias=np.zeros(4),
                           activation="softmax")
        out, _ = forward([layer], np.array([[1.0, 2.0]]))
        np.testing.assert_allclose(out, 0.25)

    def test_softmax_is_probability_vector(self):
        rng = np.random.default_rng(0)
        p = softmax(rng.normal(scale=10, size=(8, 5)))
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_shape_mismatch_rejected(self):
        layer = DenseLayer(weights=np.eye(3), bias=np.zeros(3))
        with pytest.raises(ValueError):
            forward([layer], np.zeros((1, 2)))

    def test_softmax_only_terminal(self):
        bad = [DenseLayer(weights=np.eye(2), bias=np.zeros(2),
                          activation="softmax"),
               DenseLayer(weights=np.eye(2), bias=np.zeros(2))]
        with pytest.raises(ValueError):
            forward(bad, np.zeros((1, 2)))


class TestLosses:
    def test_certain_prediction_zero_loss(self):
        probs = np.array([[0.0, 1.0, 0.0]])
        loss, _ = cross_entropy_loss(probs, [1])
        assert loss == 0.0

    def test_uniform_16_classes(self):
        probs = np.full((1, 16), 1.0 / 16.0)
        loss, _ = cross_entropy_loss(probs, [3])
        assert loss == pytest.approx(np.log(16.0))

    def test_zero_probability_clamped_with_warning(self):
        probs = np.array([[1.0, 0.0]])
        with pytest.warns(RuntimeWarning):
            loss, _ = cross_entropy_loss(probs, [1])
        assert loss == pytest.approx(-np.log(1e-12))

    def test_ce_gradient_vs_finite_differences(self):
        # oracle: central differences through softmax(logits)
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(3, 5))
        labels = np.array([0, 3, 2])

        def loss_of(lg):
            l, _ = cross_entropy_loss(softmax(lg), labels)
            return l

        _, d_logits = cross_entropy_loss(softmax(logits), labels)
        eps = 1e-6
        for idx in np.ndindex(logits.shape):
            up, dn = logits.copy(), logits.copy()
            up[idx] += eps
            dn[idx] -= eps
            fd = (loss_of(up) - loss_of(dn)) / (2 * eps)
            assert abs(fd - d_logits[idx]) < 1e-6 * max(1.0, abs(fd))

    def test_mse_values(self):
        assert mse_loss(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]))[0] == 0.0
        assert mse_loss(np.array([[0.0, 0.0]]),
                        np.array([[3.0, 4.0]]))[0] == pytest.approx(25.0)

    def test_mse_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(2)
        pred, target = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        _, grad = mse_loss(pred, target)
        np.testing.assert_allclose(grad, 2.0 * (pred - target) / 4)
        eps = 1e-6
        for idx in np.ndindex(pred.shape):
            up, dn = pred.copy(), pred.copy()
            up[idx] += eps
            dn[idx] -= eps
            fd = (mse_loss(up, target)[0] - mse_loss(dn, target)[0]) / (2 * eps)
            assert abs(fd - grad[idx]) < 1e-6

    def test_mse_length_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros((2, 3)), np.zeros((2, 4)))


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = np.array([1.0, -2.0])
        state = AdamState.like(p)
        out = adam_update(p, np.zeros(2), state, lr=0.1)
        np.testing.assert_array_equal(out, p)

    def test_first_step_magnitude(self):
        p = np.array([0.0])
        state = AdamState.like(p)
        out = adam_update(p, np.array([3.0]), state, lr=0.01)
        assert out[0] == pytest.approx(-0.01, rel=1e-6)

    def test_descends_quadratic(self):
        # scripted descent oracle: 200 ADAM steps on f(x) = x^2
        x = np.array([1.0])
        state = AdamState.like(x)
        for _ in range(200):
            x = adam_update(x, 2.0 * x, state, lr=0.01)
        assert abs(x[0]) < 0.5


def test_init_dense_bounds():
    layer = init_dense(8, 100, np.random.default_rng(3), "relu")
    bound = 1.0 / np.sqrt(100)
    assert np.all(np.abs(layer.weights) <= bound)
    assert np.all(np.abs(layer.bias) <= bound)
    assert layer.activation == "relu"

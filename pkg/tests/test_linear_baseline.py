import numpy as np
import pytest

from firstoccur.errors import DataError, ModelFormatError
from firstoccur.linear_baseline import (
    LinearModel,
    _gradient,
    deserialize_linear,
    objective,
    predict_linear,
    serialize_linear,
    train_logistic,
)
from firstoccur.metrics import roc_auc

from oracles import zoom_grid_minimize

X6 = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 1.0], [3.0, 3.0], [1.0, 2.0], [4.0, 1.0]])
Y6 = np.array([0, 0, 1, 1, 0, 1])
Y6_NOISY = np.array([0, 1, 0, 1, 0, 1])


def test_two_separable_points():
    m = train_logistic(np.array([[0.0], [1.0]]), [0, 1], l2_strength=1.0)
    assert roc_auc(m.predict_proba(np.array([[0.0], [1.0]])), [0, 1]) == 1.0


@pytest.mark.parametrize("labels, l2", [(Y6, 1.0), (Y6_NOISY, 0.5), (Y6, 3.0)])
def test_weights_match_grid_oracle(labels, l2):
    m = train_logistic(X6, labels, l2_strength=l2, max_iters=100_000, tolerance=1e-7)
    assert m.converged
    Z = (X6 - m.mean) / m.scale
    y = labels.astype(float)
    best = zoom_grid_minimize(lambda p: objective(p[:2], p[2], Z, y, l2), [0.0, 0.0, 0.0], 5.0)
    np.testing.assert_allclose(m.weights, best[:2], atol=1e-3)
    assert m.bias == pytest.approx(best[2], abs=1e-3)


def test_objective_decreases_and_gradient_small():
    rng = np.random.default_rng(0)
    X = rng.poisson(1.0, size=(300, 8)).astype(float)
    y = (X[:, 0] + rng.normal(size=300) > 1).astype(int)
    m = train_logistic(X, y, tolerance=1e-6, max_iters=5000)
    assert all(b <= a for a, b in zip(m.objective_trace, m.objective_trace[1:]))
    assert m.converged
    Z = m.standardize(X)
    gw, gb = _gradient(m.weights, m.bias, Z, y.astype(float), m.l2_strength)
    assert max(np.abs(gw).max(), abs(gb)) < 1e-6


def test_no_signal_auc_near_half():
    rng = np.random.default_rng(1)
    X = rng.poisson(2.0, size=(4000, 10)).astype(float)
    y = rng.permutation(np.r_[np.ones(500), np.zeros(3500)]).astype(int)
    m = train_logistic(X[:2000], y[:2000])
    assert abs(roc_auc(m.predict_proba(X[2000:]), y[2000:]) - 0.5) <= 0.05


def test_prediction_rules():
    zero = LinearModel(np.zeros(2), 0.0, 1.0, np.zeros(2), np.ones(2))
    assert predict_linear(zero, np.array([3.0, -1.0])) == 0.5
    m = LinearModel(np.array([1.0, 0.0]), 0.85, 1.0, np.zeros(2), np.ones(2))
    assert abs(predict_linear(m, np.array([3.0, 0.0])) - 0.979) <= 1e-3
    m2 = LinearModel(np.array([0.7, -0.2]), 0.1, 1.0, np.zeros(2), np.ones(2))
    probs = [predict_linear(m2, np.array([v, 1.0])) for v in np.linspace(-5, 5, 21)]
    assert all(b >= a for a, b in zip(probs, probs[1:]))


def test_single_class_rejected():
    with pytest.raises(DataError):
        train_logistic(X6, np.zeros(6))


def test_serialization_round_trip():
    m = train_logistic(X6, Y6)
    back = deserialize_linear(serialize_linear(m))
    np.testing.assert_array_equal(back.predict_proba(X6), m.predict_proba(X6))
    assert serialize_linear(back) == serialize_linear(m)
    with pytest.raises(ModelFormatError):
        deserialize_linear(b'{"model_type": "gbdt"}')

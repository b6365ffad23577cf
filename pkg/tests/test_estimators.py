import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from codedserve.coder import ConcatEncoder, SumEncoder
from codedserve.datasets import make_blobs_task
from codedserve.model import MlpClassifier, MlpRegressor
from codedserve.parity import ParityModel


@pytest.mark.parametrize("est", [MlpRegressor(hidden_layer_sizes=(8,)), MlpClassifier(hidden_layer_sizes=(8,)),
                                 SumEncoder(k=3), ConcatEncoder(k=2, image_shape=(4, 4, 1)),
                                 ParityModel(k=3, epochs=1)])
def test_params_and_clone(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(**params)


def test_classifier_fits_blobs():
    X_train, y_train, X_test, y_test = make_blobs_task(600, 200, n_classes=4, n_features=8, mean_scale=2.0, seed=1)
    clf = MlpClassifier(hidden_layer_sizes=(32,), epochs=10).fit(X_train, y_train)
    assert clf.score(X_test, y_test) > 0.8
    assert clf.decision_function(X_test).shape == (200, 4)
    assert set(clf.classes_) == {0, 1, 2, 3}


def test_regressor_learns_linear_map(rng):
    X = rng.normal(size=(400, 3)).astype(np.float32)
    Y = X @ np.array([[1.0], [-2.0], [0.5]], np.float32)
    reg = MlpRegressor(hidden_layer_sizes=(), activation="identity", learning_rate=0.01, l2=0.0, epochs=30)
    reg.fit(X, Y.ravel())
    assert reg.score(X, Y.ravel()) > 0.99


def test_not_fitted():
    with pytest.raises(NotFittedError):
        MlpRegressor().predict(np.zeros((1, 2)))


def test_blobs_task_balanced_and_seeded():
    a = make_blobs_task(100, 50, n_classes=5, n_features=4, seed=2)
    b = make_blobs_task(100, 50, n_classes=5, n_features=4, seed=2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert np.all(np.bincount(a[1]) == 20) and np.all(np.bincount(a[3]) == 10)

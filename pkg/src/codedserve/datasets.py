"""Seeded synthetic classification tasks."""

import numpy as np

from .tensor import DTYPE


def make_blobs_task(n_train=5000, n_test=1000, n_classes=10, n_features=64, mean_scale=0.6, seed=0):
    """Gaussian-blob classification with unit covariance and balanced classes.

    Class means are drawn from ``N(0, mean_scale**2 I)``. Returns
    ``(X_train, y_train, X_test, y_test)``.
    """
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, mean_scale, size=(n_classes, n_features))

    def draw(n):
        y = np.arange(n) % n_classes
        rng.shuffle(y)
        X = means[y] + rng.standard_normal((n, n_features))
        return X.astype(DTYPE), y.astype(np.int64)

    X_train, y_train = draw(n_train)
    X_test, y_test = draw(n_test)
    return X_train, y_train, X_test, y_test

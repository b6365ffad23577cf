"""Multi-layer perceptron used both as the deployed model and as a parity model."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .tensor import DTYPE, ShapeError

WEIGHT_MAGIC = b"PMW1"

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class WeightFileError(ValueError):
    pass


class BadMagicError(WeightFileError):
    pass


class MalformedFileError(WeightFileError):
    pass


class DimensionMismatchError(WeightFileError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    l2: float = 1e-5
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        # lr == 0 is allowed: it freezes the weights, which tests rely on
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.l2 < 0:
            raise ValueError(f"l2 must be >= 0, got {self.l2}")


@dataclass
class MlpModel:
    """ReLU (or identity) hidden layers, identity output layer.

    ``weights[i]`` has shape ``(layer_dims[i+1], layer_dims[i])``.
    """

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    loss_history: list[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("layer count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_dims[i + 1], self.layer_dims[i])
            if w.shape != expect or b.shape != (expect[0],):
                raise ShapeError(f"layer {i}: expected weight {expect}, got {w.shape} / bias {b.shape}")
        self._adam = None

    @property
    def n_inputs(self):
        return self.layer_dims[0]

    @property
    def n_outputs(self):
        return self.layer_dims[-1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def flops(self):
        """Multiply-accumulate count of one forward pass."""
        return sum(a * b for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:]))

    def copy(self, dtype=None):
        dtype = dtype or self.dtype
        return MlpModel(
            list(self.layer_dims),
            [w.astype(dtype, copy=True) for w in self.weights],
            [b.astype(dtype, copy=True) for b in self.biases],
            self.activation,
        )

    def _act(self, z):
        return np.maximum(z, 0) if self.activation == "relu" else z

    def forward(self, x):
        """Run inference on one query (1-D) or a batch of queries (2-D, one per row)."""
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_inputs:
            raise ShapeError(f"expected input of dimension {self.n_inputs}, got shape {x.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = self._act(h)
        return h[0] if single else h

    __call__ = forward

    def loss_and_grads(self, X, Y, l2=0.0):
        """MSE loss (mean over every output element) plus ``l2/2 * sum ||W||^2``.

        Returns ``(loss, weight_grads, bias_grads)``.
        """
        X = np.asarray(X, dtype=self.dtype)
        Y = np.asarray(Y, dtype=self.dtype)
        if X.ndim != 2 or X.shape[1] != self.n_inputs:
            raise ShapeError(f"inputs must be (n, {self.n_inputs}), got {X.shape}")
        if Y.shape != (X.shape[0], self.n_outputs):
            raise ShapeError(f"targets must be ({X.shape[0]}, {self.n_outputs}), got {Y.shape}")

        acts = [X]
        pre = []
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w.T + b
            pre.append(z)
            h = self._act(z) if i < last else z
            acts.append(h)

        diff = acts[-1] - Y
        loss = float(np.mean(diff.astype(np.float64) ** 2))
        if l2:
            loss += 0.5 * l2 * sum(float(np.sum(w.astype(np.float64) ** 2)) for w in self.weights)

        delta = (2.0 / diff.size) * diff
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for i in range(last, -1, -1):
            gw[i] = delta.T @ acts[i] + l2 * self.weights[i]
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i]
                if self.activation == "relu":
                    delta = delta * (pre[i - 1] > 0)
        return loss, gw, gb


def init_model(layer_dims, seed=0, activation="relu", dtype=DTYPE):
    """Xavier-uniform weights, zero biases, deterministic in ``seed``."""
    layer_dims = [int(d) for d in layer_dims]
    if len(layer_dims) < 2:
        raise ValueError("an MLP needs at least an input and an output dimension")
    if any(d <= 0 for d in layer_dims):
        raise ValueError(f"layer dimensions must be positive, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(layer_dims, weights, biases, activation)


class Adam:
    def __init__(self, model):
        self.t = 0
        self.m = [np.zeros_like(p) for p in model.weights + model.biases]
        self.v = [np.zeros_like(p) for p in model.weights + model.biases]

    def step(self, params, grads, lr):
        self.t += 1
        c1 = 1.0 - ADAM_BETA1 ** self.t
        c2 = 1.0 - ADAM_BETA2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.dtype)


def train_step(model, batch_inputs, batch_targets, cfg):
    """One Adam update on MSE + L2. Returns the loss before the update."""
    loss, gw, gb = model.loss_and_grads(batch_inputs, batch_targets, cfg.l2)
    if model._adam is None:
        model._adam = Adam(model)
    if cfg.learning_rate:
        model._adam.step(model.weights + model.biases, gw + gb, cfg.learning_rate)
    return loss


def train(model, dataset, cfg):
    X, Y = dataset
    X = np.asarray(X, dtype=model.dtype)
    Y = np.asarray(Y, dtype=model.dtype)
    if len(X) != len(Y):
        raise ShapeError(f"{len(X)} inputs but {len(Y)} targets")
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            total += train_step(model, X[idx], Y[idx], cfg) * len(idx)
        model.loss_history.append(total / max(len(X), 1))
    return model


def save_weights(model, path):
    parts = [WEIGHT_MAGIC, struct.pack("<I", len(model.weights))]
    for w, b in zip(model.weights, model.biases):
        rows, cols = w.shape
        parts.append(struct.pack("<II", rows, cols))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path, activation="relu"):
    buf = Path(path).read_bytes()
    if len(buf) < 8:
        raise MalformedFileError(f"{path}: file too short ({len(buf)} bytes)")
    if buf[:4] != WEIGHT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {buf[:4]!r}")
    (n_layers,) = struct.unpack_from("<I", buf, 4)
    if n_layers == 0:
        raise MalformedFileError(f"{path}: zero layers")
    off = 8
    dims, weights, biases = [], [], []
    for i in range(n_layers):
        if off + 8 > len(buf):
            raise MalformedFileError(f"{path}: truncated header of layer {i}")
        rows, cols = struct.unpack_from("<II", buf, off)
        off += 8
        if rows == 0 or cols == 0:
            raise DimensionMismatchError(f"{path}: layer {i} has an empty dimension")
        if i == 0:
            dims.append(cols)
        elif cols != dims[-1]:
            raise DimensionMismatchError(f"{path}: layer {i} expects {cols} inputs, previous layer gives {dims[-1]}")
        need = 4 * (rows * cols + rows)
        if off + need > len(buf):
            raise MalformedFileError(f"{path}: truncated data of layer {i}")
        w = np.frombuffer(buf, dtype="<f4", count=rows * cols, offset=off).reshape(rows, cols)
        off += 4 * rows * cols
        b = np.frombuffer(buf, dtype="<f4", count=rows, offset=off)
        off += 4 * rows
        weights.append(w.astype(DTYPE))
        biases.append(b.astype(DTYPE))
        dims.append(rows)
    if off != len(buf):
        raise MalformedFileError(f"{path}: {len(buf) - off} trailing bytes")
    return MlpModel(dims, weights, biases, activation)


class MlpRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :class:`MlpModel` trained with MSE and Adam."""

    def __init__(self, hidden_layer_sizes=(200, 100), activation="relu", learning_rate=0.001,
                 l2=1e-5, batch_size=32, epochs=10, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.learning_rate = learning_rate
        self.l2 = l2
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(self.learning_rate, self.l2, self.batch_size, self.epochs, self.random_state)

    def fit(self, X, Y):
        X, Y = check_X_y(X, Y, multi_output=True, dtype=np.float32)
        if Y.ndim == 1:
            Y = Y[:, None]
        dims = [X.shape[1], *self.hidden_layer_sizes, Y.shape[1]]
        self.model_ = init_model(dims, seed=self.random_state, activation=self.activation)
        train(self.model_, (X, Y), self._train_config())
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32)
        return self.model_.forward(X)


class MlpClassifier(ClassifierMixin, BaseEstimator):
    """Classifier trained with MSE against one-hot targets; predicts the top-1 class."""

    def __init__(self, hidden_layer_sizes=(200, 100), learning_rate=0.001, l2=1e-5,
                 batch_size=32, epochs=10, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.l2 = l2
        self.batch_size = batch_size
        self.epochs = epochs
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float32)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        targets = np.eye(len(self.classes_), dtype=np.float32)[encoded]
        dims = [X.shape[1], *self.hidden_layer_sizes, len(self.classes_)]
        self.model_ = init_model(dims, seed=self.random_state)
        cfg = TrainConfig(self.learning_rate, self.l2, self.batch_size, self.epochs, self.random_state)
        train(self.model_, (X, targets), cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.forward(check_array(X, dtype=np.float32))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

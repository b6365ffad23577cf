"""Training data, training and accuracy evaluation for parity models."""

from __future__ import annotations

import struct
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import coder
from .coder import CoefficientMatrix, EncoderKind
from .model import (BadMagicError, DimensionMismatchError, MalformedFileError, MlpModel,
                    TrainConfig, init_model, train)
from .tensor import DTYPE, argmax

DATASET_MAGIC = b"PMD1"


@dataclass
class ParityDataset:
    """Encoded parity queries and their decoder-expected targets.

    ``groups[n]`` lists the indices (into the base queries) encoded into sample ``n``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    groups: np.ndarray
    k: int
    encoder_kind: EncoderKind = EncoderKind.SUM
    coeff_row: int = 0

    def __len__(self):
        return len(self.inputs)

    @property
    def samples(self):
        return list(zip(self.inputs, self.targets))

    def flat_inputs(self):
        return self.inputs.reshape(len(self.inputs), -1)

    def save(self, path):
        in_shape = self.inputs.shape[1:]
        header = [DATASET_MAGIC,
                  struct.pack("<IIII", self.k, int(self.encoder_kind), self.coeff_row, len(self)),
                  struct.pack("<I", len(in_shape)),
                  struct.pack(f"<{len(in_shape)}I", *in_shape),
                  struct.pack("<I", self.targets.shape[1])]
        body = [np.ascontiguousarray(self.inputs, dtype="<f4").tobytes(),
                np.ascontiguousarray(self.targets, dtype="<f4").tobytes(),
                np.ascontiguousarray(self.groups, dtype="<u4").tobytes()]
        Path(path).write_bytes(b"".join(header + body))

    @classmethod
    def load(cls, path):
        buf = Path(path).read_bytes()
        if len(buf) < 4 or buf[:4] != DATASET_MAGIC:
            raise BadMagicError(f"{path}: bad magic {buf[:4]!r}")
        try:
            k, kind, row, n, ndim = struct.unpack_from("<IIIII", buf, 4)
            off = 24
            in_shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            (out_dim,) = struct.unpack_from("<I", buf, off)
            off += 4
        except struct.error as exc:
            raise MalformedFileError(f"{path}: truncated header") from exc
        if k < 2 or 0 in in_shape or out_dim == 0:
            raise DimensionMismatchError(f"{path}: invalid dimensions k={k} input={in_shape} output={out_dim}")
        n_in = n * int(np.prod(in_shape))
        need = 4 * (n_in + n * out_dim + n * k)
        if len(buf) - off != need:
            raise MalformedFileError(f"{path}: expected {need} data bytes, found {len(buf) - off}")
        inputs = np.frombuffer(buf, "<f4", n_in, off).reshape(n, *in_shape).astype(DTYPE)
        off += 4 * n_in
        targets = np.frombuffer(buf, "<f4", n * out_dim, off).reshape(n, out_dim).astype(DTYPE)
        off += 4 * n * out_dim
        groups = np.frombuffer(buf, "<u4", n * k, off).reshape(n, k).astype(np.int64)
        return cls(inputs, targets, groups, k, EncoderKind(kind), row)


def _as_model(deployed):
    if isinstance(deployed, MlpModel):
        return deployed
    model = getattr(deployed, "model_", None)
    if isinstance(model, MlpModel):
        return model
    if hasattr(deployed, "forward"):
        return deployed
    raise TypeError(f"cannot use {type(deployed).__name__} as a model")


def group_indices(n, k, seed, repeats=1):
    """Seeded disjoint k-tuples of ``range(n)``; leftovers of each pass are dropped."""
    rng = np.random.default_rng(seed)
    usable = (n // k) * k
    return np.concatenate([rng.permutation(n)[:usable].reshape(-1, k) for _ in range(repeats)])


def build_parity_dataset(base_queries, deployed, k, encoder_kind=EncoderKind.SUM, coeff_row=0,
                         seed=0, repeats=1):
    """Encode shuffled k-tuples of queries; label each with the coefficient-weighted
    sum of the deployed model's predictions on its members.

    ``repeats`` > 1 concatenates several independent groupings of the same queries.
    """
    deployed = _as_model(deployed)
    queries = np.asarray(base_queries, dtype=DTYPE)
    if len(queries) < k:
        raise ValueError(f"need at least k={k} queries, got {len(queries)}")
    kind = EncoderKind.parse(encoder_kind)
    coeffs = CoefficientMatrix(k, coeff_row + 1)
    preds = deployed.forward(queries.reshape(len(queries), -1))
    groups = group_indices(len(queries), k, seed, repeats)
    inputs = np.stack([coder.encode(kind, list(queries[g])) for g in groups])
    targets = np.stack([coder.target_label(coeffs, coeff_row, list(preds[g])) for g in groups])
    return ParityDataset(inputs, targets, groups, k, kind, coeff_row)


def train_parity_model(dataset, arch=None, cfg=None, deployed=None):
    """Train a parity model with MSE on ``dataset``.

    ``arch`` defaults to the deployed model's layer dimensions, giving the parity
    model the same inference cost as the model it protects.
    """
    cfg = cfg or TrainConfig()
    if arch is None:
        if deployed is None:
            raise ValueError("either arch or deployed must be given")
        arch = _as_model(deployed).layer_dims
    arch = list(arch)
    X = dataset.flat_inputs()
    if arch[0] != X.shape[1]:
        raise ValueError(f"architecture expects {arch[0]} inputs, parity queries have {X.shape[1]}")
    if arch[-1] != dataset.targets.shape[1]:
        raise ValueError(f"architecture has {arch[-1]} outputs, targets have {dataset.targets.shape[1]}")
    model = init_model(arch, seed=cfg.seed)
    return train(model, (X, dataset.targets), cfg)


def evaluate_available(deployed, queries, labels):
    deployed = _as_model(deployed)
    queries = np.asarray(queries, dtype=DTYPE)
    outs = deployed.forward(queries.reshape(len(queries), -1))
    return float(np.mean(np.argmax(outs, axis=1) == np.asarray(labels)))


def evaluate_degraded(deployed, parity_model, test_set, k, encoder_kind=EncoderKind.SUM, seed=0):
    """Top-1 accuracy of reconstructions, withholding every position of every k-tuple in turn."""
    deployed = _as_model(deployed)
    queries, labels = test_set
    queries = np.asarray(queries, dtype=DTYPE)
    labels = np.asarray(labels)
    if len(queries) < k:
        raise ValueError(f"need at least k={k} test samples, got {len(queries)}")
    kind = EncoderKind.parse(encoder_kind)
    preds = deployed.forward(queries.reshape(len(queries), -1))
    correct = total = 0
    for g in group_indices(len(queries), k, seed):
        parity_out = parity_model.forward(coder.encode(kind, list(queries[g])).ravel())
        for j in range(k):
            available = [(i, preds[g[i]]) for i in range(k) if i != j]
            _, recon = coder.decode_single(parity_out, available)
            correct += argmax(recon) == labels[g[j]]
            total += 1
    return correct / total


def evaluate_default(labels, n_outputs, default_prediction=None):
    """Accuracy of always answering ``default_prediction`` (zeros, i.e. class 0, by default)."""
    if default_prediction is None:
        default_prediction = np.zeros(n_outputs, dtype=DTYPE)
    return float(np.mean(np.asarray(labels) == argmax(default_prediction)))


def overall_accuracy(a_available, a_degraded, f_u):
    """``(1 - f_u) * A_a + f_u * A_d``.

    Accuracies may be fractions or percentages; the unit is preserved. Exact
    for ``fractions.Fraction`` arguments.
    """
    if not 0 <= f_u <= 1:
        raise ValueError(f"unavailable fraction must be in [0, 1], got {f_u}")
    for name, a in (("a_available", a_available), ("a_degraded", a_degraded)):
        if not 0 <= a <= 100:
            raise ValueError(f"{name} must be in [0, 100], got {a}")
    return (1 - f_u) * a_available + f_u * a_degraded


@dataclass(frozen=True)
class AccuracyReport:
    a_available: float
    a_degraded: float
    f_unavailable: float
    a_overall: float

    @classmethod
    def from_counts(cls, available_correct, available_total, degraded_correct, degraded_total, exact=False):
        """Rates from raw counts. ``exact=True`` keeps every field a ``Fraction``."""
        n = available_total + degraded_total
        a_a = Fraction(available_correct, available_total) if available_total else Fraction(0)
        a_d = Fraction(degraded_correct, degraded_total) if degraded_total else Fraction(0)
        f_u = Fraction(degraded_total, n) if n else Fraction(0)
        if not exact:
            a_a, a_d, f_u = float(a_a), float(a_d), float(f_u)
        return cls(a_a, a_d, f_u, overall_accuracy(a_a, a_d, f_u))

    @classmethod
    def from_rates(cls, a_available, a_degraded, f_u):
        return cls(a_available, a_degraded, f_u, overall_accuracy(a_available, a_degraded, f_u))


class ParityModel(BaseEstimator):
    """Estimator that learns a parity model for a fitted deployed model.

    ``fit(X)`` builds the parity dataset from queries ``X`` (labels come from the
    deployed model's predictions, so no ``y`` is needed); ``predict`` runs the
    parity model on parity queries; ``score(X, y)`` is degraded-mode accuracy.
    """

    def __init__(self, deployed=None, k=2, encoder="sum", coeff_row=0, hidden_layer_sizes=None,
                 learning_rate=0.001, l2=1e-5, batch_size=32, epochs=10, repeats=1,
                 image_shape=None, random_state=0):
        self.deployed = deployed
        self.k = k
        self.encoder = encoder
        self.coeff_row = coeff_row
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate = learning_rate
        self.l2 = l2
        self.batch_size = batch_size
        self.epochs = epochs
        self.repeats = repeats
        self.image_shape = image_shape
        self.random_state = random_state

    def _queries(self, X):
        X = check_array(X, dtype=np.float32)
        return X.reshape(len(X), *self.image_shape) if self.image_shape else X

    def fit(self, X, y=None):
        deployed = _as_model(self.deployed)
        queries = self._queries(X)
        self.dataset_ = build_parity_dataset(queries, deployed, self.k, self.encoder, self.coeff_row,
                                             seed=self.random_state, repeats=self.repeats)
        arch = None
        if self.hidden_layer_sizes is not None:
            arch = [X.shape[1], *self.hidden_layer_sizes, deployed.n_outputs]
        cfg = TrainConfig(self.learning_rate, self.l2, self.batch_size, self.epochs, self.random_state)
        self.model_ = train_parity_model(self.dataset_, arch, cfg, deployed)
        self.n_features_in_ = X.shape[1]
        return self

    def forward(self, parity_query):
        check_is_fitted(self, "model_")
        return self.model_.forward(parity_query)

    def predict(self, P):
        return self.forward(check_array(P, dtype=np.float32))

    def reconstruct(self, parity_query, available):
        return coder.decode_single(self.forward(np.ravel(parity_query)), available)

    def score(self, X, y):
        check_is_fitted(self, "model_")
        return evaluate_degraded(self.deployed, self.model_, (self._queries(X), y), self.k,
                                 self.encoder, seed=self.random_state)

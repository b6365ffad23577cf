"""Encoders that fold k queries into a parity query and decoders that rebuild
unavailable predictions from parity-model outputs."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from . import tensor
from .tensor import DTYPE, ShapeError

MAX_K = 8


class EncoderKind(enum.IntEnum):
    SUM = 0
    CONCAT_GRID = 1

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().lower().replace("-", "_")
            aliases = {"sum": cls.SUM, "concat": cls.CONCAT_GRID, "concat_grid": cls.CONCAT_GRID}
            if key in aliases:
                return aliases[key]
        return cls(int(value))


class DecodeError(ValueError):
    """Inputs to a decoder are inconsistent (counts, indices or shapes)."""


class SingularSystemError(RuntimeError):
    """A coefficient submatrix turned out singular; never expected for Vandermonde rows."""


@dataclass(frozen=True)
class CoefficientMatrix:
    """Vandermonde decoding coefficients ``c[j][i] = (i + 1) ** j``.

    Row 0 is all ones, so with ``r == 1`` the parity target is the plain sum of
    the k predictions. For k=2, row 1 is ``[1, 2]``.
    """

    k: int
    r: int = 1

    def __post_init__(self):
        if not 2 <= self.k <= MAX_K:
            raise ValueError(f"k must be in [2, {MAX_K}], got {self.k}")
        if self.r < 1:
            raise ValueError(f"r must be >= 1, got {self.r}")

    @cached_property
    def c(self):
        nodes = np.arange(1, self.k + 1, dtype=np.float64)
        return np.vstack([nodes ** j for j in range(self.r)])

    def row(self, j):
        if not 0 <= j < self.r:
            raise IndexError(f"coefficient row {j} out of range for r={self.r}")
        return self.c[j]

    def submatrix(self, rows, cols):
        return self.c[np.ix_(list(rows), list(cols))]


def _check_group(queries, min_k=2):
    if len(queries) < min_k:
        raise ShapeError(f"need at least {min_k} queries to encode, got {len(queries)}")
    arrs = [tensor.as_tensor(q) for q in queries]
    shape = arrs[0].shape
    for i, a in enumerate(arrs[1:], start=1):
        if a.shape != shape:
            raise ShapeError(f"query {i} has shape {a.shape}, expected {shape}")
    return arrs


def encode_sum(queries):
    """Elementwise sum of k same-shaped queries, accumulated in index order."""
    arrs = _check_group(queries)
    out = arrs[0].copy()
    for a in arrs[1:]:
        out += a
    return out


def encode_concat(queries):
    """Downsize k images and tile them into one image of the original shape.

    k=4 gives a 2x2 row-major grid of half-height, half-width images; k=2
    places two half-width images side by side.
    """
    arrs = _check_group(queries)
    k = len(arrs)
    if k not in (2, 4):
        raise ShapeError(f"concatenation encoder supports k in {{2, 4}}, got {k}")
    if arrs[0].ndim != 3:
        raise ShapeError(f"concatenation encoder needs H x W x C images, got shape {arrs[0].shape}")
    h, w, _ = arrs[0].shape
    if k == 4:
        if h % 2 or w % 2:
            raise ShapeError(f"image {h}x{w} cannot be split into a 2x2 grid")
        tiles = [tensor.downsample(a, h // 2, w // 2) for a in arrs]
        top = np.concatenate(tiles[:2], axis=1)
        bottom = np.concatenate(tiles[2:], axis=1)
        return np.concatenate([top, bottom], axis=0)
    if w % 2:
        raise ShapeError(f"image width {w} cannot be split in two")
    tiles = [tensor.downsample(a, h, w // 2) for a in arrs]
    return np.concatenate(tiles, axis=1)


def encode(kind, queries):
    kind = EncoderKind.parse(kind)
    return encode_sum(queries) if kind is EncoderKind.SUM else encode_concat(queries)


def target_label(coeffs, row, predictions):
    """Parity-model training target ``sum_i c[row][i] * F(X_i)``."""
    if len(predictions) != coeffs.k:
        raise DecodeError(f"expected {coeffs.k} predictions, got {len(predictions)}")
    arrs = _check_group(predictions)
    weights = coeffs.row(row)
    out = np.zeros_like(arrs[0])
    for w, p in zip(weights, arrs):
        out += tensor.scale(p, w)
    return out


def _check_available(available, k, shape):
    seen = set()
    for idx, pred in available:
        if not 0 <= idx < k:
            raise DecodeError(f"index {idx} outside [0, {k})")
        if idx in seen:
            raise DecodeError(f"duplicate index {idx}")
        seen.add(idx)
        if np.shape(pred) != shape:
            raise DecodeError(f"prediction {idx} has shape {np.shape(pred)}, expected {shape}")
    return seen


def decode_single(parity_out, available):
    """Subtraction decoder for one unavailable prediction.

    ``available`` holds the k-1 ``(index, prediction)`` pairs that did arrive;
    k is inferred as ``len(available) + 1``. Returns ``(missing_index, reconstruction)``.
    """
    parity_out = tensor.as_tensor(parity_out)
    k = len(available) + 1
    if k < 2:
        raise DecodeError("need at least one available prediction")
    seen = _check_available(available, k, parity_out.shape)
    (missing,) = set(range(k)) - seen
    acc = np.zeros_like(parity_out)
    for _, pred in sorted(available, key=lambda p: p[0]):
        acc += np.asarray(pred, dtype=DTYPE)
    return missing, parity_out - acc


def solve(a, b):
    """Gaussian elimination with partial pivoting for ``a @ x = b``.

    ``b`` may have several columns; each is solved against the same ``a``.
    """
    a = np.array(a, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise DecodeError(f"cannot solve system with matrix {a.shape} and rhs {b.shape}")
    scale_ = np.abs(a).max() if a.size else 1.0
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) <= 1e-12 * scale_:
            raise SingularSystemError("coefficient submatrix is singular")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        for r in range(col + 1, n):
            f = a[r, col] / a[col, col]
            if f:
                a[r, col:] -= f * a[col, col:]
                b[r] -= f * b[col]
    x = np.empty_like(b)
    for r in range(n - 1, -1, -1):
        x[r] = (b[r] - a[r, r + 1:] @ x[r + 1:]) / a[r, r]
    return x


def decode_multi(parity_outs, available, coeffs):
    """Recover every unavailable prediction from ``r'`` parity outputs.

    ``parity_outs`` holds ``(parity_row, output)`` pairs, ``available`` holds
    ``(index, prediction)`` pairs; together they must give exactly k knowns.
    Returns ``[(index, reconstruction), ...]`` sorted by index.
    """
    if not parity_outs:
        raise DecodeError("no parity outputs supplied")
    rows = [j for j, _ in parity_outs]
    if len(set(rows)) != len(rows):
        raise DecodeError(f"duplicate parity rows {rows}")
    if any(not 0 <= j < coeffs.r for j in rows):
        raise DecodeError(f"parity rows {rows} out of range for r={coeffs.r}")
    shape = np.shape(parity_outs[0][1])
    for j, out in parity_outs:
        if np.shape(out) != shape:
            raise DecodeError(f"parity output {j} has shape {np.shape(out)}, expected {shape}")
    seen = _check_available(available, coeffs.k, shape)
    if len(seen) + len(rows) != coeffs.k:
        raise DecodeError(
            f"{len(seen)} available predictions and {len(rows)} parity outputs do not total k={coeffs.k}")
    missing = sorted(set(range(coeffs.k)) - seen)
    if rows == [0]:
        # row 0 is all ones: plain subtraction, bit-identical to decode_single
        return [decode_single(parity_outs[0][1], available)]

    rhs = np.stack([np.asarray(out, dtype=np.float64).ravel() for _, out in parity_outs])
    for idx, pred in sorted(available, key=lambda p: p[0]):
        rhs -= np.outer(coeffs.c[rows, idx], np.asarray(pred, dtype=np.float64).ravel())
    x = solve(coeffs.submatrix(rows, missing), rhs)
    return [(idx, x[n].reshape(shape).astype(DTYPE)) for n, idx in enumerate(missing)]


class SumEncoder(TransformerMixin, BaseEstimator):
    """Encode consecutive groups of ``k`` rows of ``X`` into one parity row each.

    Trailing rows that do not fill a group are dropped.
    """

    def __init__(self, k=2):
        self.k = k

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float32)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float32)
        n = (len(X) // self.k) * self.k
        return X[:n].reshape(-1, self.k, X.shape[1]).sum(axis=1, dtype=np.float32)


class ConcatEncoder(TransformerMixin, BaseEstimator):
    """Image-grid encoder over flattened ``image_shape`` rows."""

    def __init__(self, k=4, image_shape=(32, 32, 3)):
        self.k = k
        self.image_shape = image_shape

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float32)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float32)
        imgs = X.reshape(-1, *self.image_shape)
        groups = len(imgs) // self.k
        return np.stack([
            encode_concat(list(imgs[g * self.k:(g + 1) * self.k])).ravel() for g in range(groups)
        ]) if groups else np.empty((0, X.shape[1]), dtype=np.float32)

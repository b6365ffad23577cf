"""Small dense float32 kernel shared by the model, coder and serving code.

Tensors are plain ``numpy.ndarray`` objects of dtype float32. The helpers
here validate shapes and always return fresh float32 arrays, so callers
never mutate shared inputs.
"""

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(x, dtype=DTYPE):
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 0:
        raise ShapeError("tensors must have at least one dimension")
    if arr.size == 0:
        raise ShapeError("tensors must be non-empty")
    return arr


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return a + b


def scale(a, c):
    a = as_tensor(a)
    return (a * DTYPE(c)).astype(DTYPE, copy=False)


def matmul(w, x):
    """Matrix-vector product ``w @ x`` for ``w`` of shape (m, n), ``x`` of shape (n,)."""
    w, x = as_tensor(w), as_tensor(x)
    if w.ndim != 2 or x.ndim != 1:
        raise ShapeError(f"matmul expects 2-D by 1-D, got {w.ndim}-D by {x.ndim}-D")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {w.shape[1]} and {x.shape[0]} differ")
    return w @ x


def downsample(img, out_h, out_w):
    """Average-pool an (H, W, C) image over equal blocks to (out_h, out_w, C)."""
    img = as_tensor(img)
    if img.ndim != 3:
        raise ShapeError(f"downsample expects an H x W x C image, got shape {img.shape}")
    h, w, c = img.shape
    if out_h <= 0 or out_w <= 0 or h % out_h or w % out_w:
        raise ShapeError(f"cannot pool {h}x{w} into {out_h}x{out_w} equal blocks")
    bh, bw = h // out_h, w // out_w
    blocks = img.reshape(out_h, bh, out_w, bw, c)
    # accumulate in float64 so the block mean is exact to float32 precision
    return blocks.mean(axis=(1, 3), dtype=np.float64).astype(DTYPE)


def argmax(v):
    """Index of the largest element; ties resolve to the lowest index."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ShapeError(f"argmax expects a 1-D tensor, got shape {v.shape}")
    if v.size == 0:
        raise ShapeError("argmax of an empty tensor")
    # np.argmax already returns the first occurrence of the maximum
    return int(np.argmax(v))


def mse(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mse")
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(diff * diff))

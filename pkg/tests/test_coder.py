import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from codedserve import coder, tensor
from codedserve.coder import CoefficientMatrix, ConcatEncoder, DecodeError, SumEncoder
from codedserve.tensor import ShapeError

from conftest import linear_model, scaled_identity


def test_coefficient_rows():
    c = CoefficientMatrix(2, 2)
    np.testing.assert_array_equal(c.c, [[1, 1], [1, 2]])
    c = CoefficientMatrix(4, 3)
    np.testing.assert_array_equal(c.row(0), np.ones(4))
    np.testing.assert_array_equal(c.row(2), [1, 4, 9, 16])
    with pytest.raises(ValueError):
        CoefficientMatrix(1)
    with pytest.raises(ValueError):
        CoefficientMatrix(2, 0)


def test_every_submatrix_invertible():
    for k in range(2, 7):
        for r in range(1, 4):
            c = CoefficientMatrix(k, r)
            for size in range(1, r + 1):
                for rows in itertools.combinations(range(r), size):
                    for cols in itertools.combinations(range(k), size):
                        assert abs(np.linalg.det(c.submatrix(rows, cols))) > 0


def test_encode_sum_examples(rng):
    np.testing.assert_array_equal(coder.encode_sum([[1, 2], [3, 4]]), [4, 6])
    np.testing.assert_array_equal(coder.encode_sum([np.zeros(3)] * 3), np.zeros(3))
    qs = list(rng.normal(size=(4, 10)).astype(np.float32))
    folded = qs[0]
    for q in qs[1:]:
        folded = tensor.add(folded, q)
    assert coder.encode_sum(qs).tobytes() == folded.tobytes()


def test_encode_sum_errors():
    with pytest.raises(ValueError):
        coder.encode_sum([[1, 2]])
    with pytest.raises(ShapeError):
        coder.encode_sum([[1, 2], [1, 2, 3]])


def test_encode_concat_k4_layout(rng):
    imgs = list(rng.random((4, 32, 32, 3)).astype(np.float32))
    out = coder.encode_concat(imgs)
    assert out.shape == (32, 32, 3) and out.size == 3072
    quads = [out[:16, :16], out[:16, 16:], out[16:, :16], out[16:, 16:]]
    for img, quad in zip(imgs, quads):
        np.testing.assert_array_equal(quad, tensor.downsample(img, 16, 16))
    const = coder.encode_concat([np.full((8, 8, 1), 0.5, np.float32)] * 4)
    np.testing.assert_allclose(const, 0.5)


def test_encode_concat_k2_layout(rng):
    a, b = rng.random((2, 4, 6, 2)).astype(np.float32)
    out = coder.encode_concat([a, b])
    assert out.shape == a.shape
    np.testing.assert_array_equal(out[:, :3], tensor.downsample(a, 4, 3))
    np.testing.assert_array_equal(out[:, 3:], tensor.downsample(b, 4, 3))


def test_encode_concat_errors():
    img = np.zeros((4, 4, 1), np.float32)
    with pytest.raises(ValueError):
        coder.encode_concat([img] * 3)
    with pytest.raises(ShapeError):
        coder.encode_concat([img, np.zeros((4, 2, 1), np.float32)])
    with pytest.raises(ShapeError):
        coder.encode_concat([np.zeros((3, 3, 1), np.float32)] * 4)


def test_decode_single_linear_example():
    f = scaled_identity(2)
    x1, x2 = np.array([1, 2], np.float32), np.array([3, 4], np.float32)
    parity_out = f.forward(coder.encode_sum([x1, x2]))
    np.testing.assert_array_equal(parity_out, [8, 12])
    idx, recon = coder.decode_single(parity_out, [(0, f.forward(x1))])
    assert idx == 1
    np.testing.assert_array_equal(recon, [6, 8])


@given(st.integers(2, 6), st.data())
def test_decode_single_subtraction_identity(k, data):
    # dyadic values make every partial sum exact, so the identity holds bitwise
    elems = st.integers(-2 ** 10, 2 ** 10).map(lambda v: np.float32(v / 8))
    preds = [data.draw(arrays(np.float32, 5, elements=elems)) for _ in range(k)]
    missing = data.draw(st.integers(0, k - 1))
    total = coder.encode_sum(preds)
    available = [(i, p) for i, p in enumerate(preds) if i != missing]
    idx, recon = coder.decode_single(total, available)
    assert idx == missing
    np.testing.assert_array_equal(recon, preds[missing])
    rest = np.zeros(5, np.float32)
    for _, p in available:
        rest += p
    np.testing.assert_array_equal(recon + rest, total)


def test_decode_single_errors():
    p = np.zeros(2, np.float32)
    with pytest.raises(DecodeError):
        coder.decode_single(p, [])
    with pytest.raises(DecodeError):
        coder.decode_single(p, [(0, p), (0, p)])
    with pytest.raises(DecodeError):
        coder.decode_single(p, [(0, np.zeros(3, np.float32))])
    with pytest.raises(DecodeError):
        coder.decode_single(p, [(5, p)])


@given(st.integers(2, 4), st.integers(0, 10_000))
def test_linear_exactness(k, seed):
    rng = np.random.default_rng(seed)
    f = linear_model([8, 6, 4], seed=seed)
    X = list(rng.normal(size=(k, 8)).astype(np.float32))
    parity_out = f.forward(coder.encode_sum(X))
    preds = [f.forward(x) for x in X]
    for missing in range(k):
        _, recon = coder.decode_single(parity_out, [(i, preds[i]) for i in range(k) if i != missing])
        assert np.max(np.abs(recon - preds[missing])) < 1e-4


def test_solve_matches_numpy(rng):
    a = rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 4))
    np.testing.assert_allclose(coder.solve(a, b), np.linalg.solve(a, b), atol=1e-12)
    with pytest.raises(coder.SingularSystemError):
        coder.solve(np.ones((2, 2)), np.ones((2, 1)))


def test_decode_multi_two_missing_k2():
    f = scaled_identity(2)
    x1, x2 = np.array([1, 2], np.float32), np.array([3, 4], np.float32)
    y1, y2 = f.forward(x1), f.forward(x2)
    coeffs = CoefficientMatrix(2, 2)
    out0, out1 = y1 + y2, y1 + 2 * y2
    got = coder.decode_multi([(0, out0), (1, out1)], [], coeffs)
    assert [i for i, _ in got] == [0, 1]
    np.testing.assert_allclose(got[0][1], 2 * out0 - out1, atol=1e-6)
    np.testing.assert_allclose(got[1][1], out1 - out0, atol=1e-6)
    np.testing.assert_allclose(got[0][1], y1, atol=1e-6)
    np.testing.assert_allclose(got[1][1], y2, atol=1e-6)


def test_decode_multi_single_row_matches_decode_single(rng):
    preds = list(rng.normal(size=(3, 5)).astype(np.float32))
    parity = coder.encode_sum(preds)
    available = [(0, preds[0]), (2, preds[2])]
    single = coder.decode_single(parity, available)
    (multi,) = coder.decode_multi([(0, parity)], available, CoefficientMatrix(3, 1))
    assert multi[0] == single[0]
    np.testing.assert_array_equal(multi[1], single[1])


def test_decode_multi_k3_linear_oracle(rng):
    f = linear_model([6, 4], seed=11)
    X = rng.normal(size=(3, 6)).astype(np.float32)
    coeffs = CoefficientMatrix(3, 2)
    preds = [f.forward(x) for x in X]
    outs = [(j, coder.target_label(coeffs, j, preds)) for j in range(2)]
    got = coder.decode_multi(outs, [(1, preds[1])], coeffs)
    for idx, recon in got:
        assert np.max(np.abs(recon - f.forward(X[idx]))) < 1e-4


def test_decode_multi_errors(rng):
    coeffs = CoefficientMatrix(3, 2)
    p = np.zeros(2, np.float32)
    with pytest.raises(DecodeError):
        coder.decode_multi([(0, p)], [(0, p)], coeffs)
    with pytest.raises(DecodeError):
        coder.decode_multi([(0, p), (0, p)], [(0, p)], coeffs)
    with pytest.raises(DecodeError):
        coder.decode_multi([(2, p)], [(0, p), (1, p)], coeffs)


def test_target_label(rng):
    preds = list(rng.normal(size=(2, 4)).astype(np.float32))
    c = CoefficientMatrix(2, 2)
    np.testing.assert_allclose(coder.target_label(c, 0, preds), preds[0] + preds[1], atol=1e-6)
    np.testing.assert_allclose(coder.target_label(c, 1, preds), preds[0] + 2 * preds[1], atol=1e-6)
    np.testing.assert_array_equal(coder.target_label(c, 0, preds), coder.encode_sum(preds))


def test_sum_encoder_transformer(rng):
    X = rng.normal(size=(7, 3)).astype(np.float32)
    P = SumEncoder(k=3).fit_transform(X)
    assert P.shape == (2, 3)
    np.testing.assert_array_equal(P[1], coder.encode_sum(list(X[3:6])))
    assert SumEncoder(k=3).get_params() == {"k": 3}


def test_concat_encoder_transformer(rng):
    X = rng.random((4, 4 * 4 * 2)).astype(np.float32)
    P = ConcatEncoder(k=4, image_shape=(4, 4, 2)).fit_transform(X)
    expect = coder.encode_concat(list(X.reshape(4, 4, 4, 2)))
    np.testing.assert_array_equal(P[0], expect.ravel())

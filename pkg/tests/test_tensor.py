import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from edgecall.tensor import DTYPE, ShapeError, add, as_tensor, pad_time, slice_time


def col(*v):
    return np.array(v, DTYPE).reshape(-1, 1)


def test_pad_time_examples():
    np.testing.assert_array_equal(pad_time(col(1, 2, 3), 1, 1), col(0, 1, 2, 3, 0))
    np.testing.assert_array_equal(pad_time(col(5), 2, 0), col(0, 0, 5))
    x = col(4, 5)
    np.testing.assert_array_equal(pad_time(x, 0, 0), x)


def test_pad_time_value_and_batch():
    y = pad_time(np.ones((2, 3, 4)), 1, 2, value=-1.0)
    assert y.shape == (2, 6, 4)
    assert (y[:, 0] == -1).all() and (y[:, -2:] == -1).all() and (y[:, 1:4] == 1).all()


def test_pad_time_rejects_negative():
    with pytest.raises(ValueError):
        pad_time(col(1), -1, 0)


def test_slice_time_examples():
    np.testing.assert_array_equal(slice_time(col(1, 2, 3, 4), 1, 2), col(2, 3))
    np.testing.assert_array_equal(slice_time(col(1, 2, 3), 2, 1), col(3))
    x = col(1, 2, 3)
    np.testing.assert_array_equal(slice_time(x, 0, 3), x)


@pytest.mark.parametrize("start,length", [(-1, 1), (2, 2), (0, 4)])
def test_slice_time_out_of_range(start, length):
    with pytest.raises(IndexError):
        slice_time(col(1, 2, 3), start, length)


def test_add_examples():
    np.testing.assert_array_equal(add(col(1, 2), col(0, 0)), col(1, 2))
    np.testing.assert_array_equal(add(col(1, 2), col(3, 4)), col(4, 6))
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert not add(x, -x).any()


def test_add_shape_mismatch():
    with pytest.raises(ShapeError):
        add(np.zeros((3, 2)), np.zeros((3, 1)))


def test_as_tensor_validation():
    assert as_tensor([1.0, 2.0]).shape == (2, 1)
    assert as_tensor(np.zeros((2, 3), np.int8), dtype=None).dtype == np.int8
    for bad in (np.zeros((0, 2)), np.zeros((1, 2, 3, 4)), 3.0):
        with pytest.raises(ShapeError):
            as_tensor(bad)


tensors = arrays(DTYPE, st.tuples(st.integers(1, 12), st.integers(1, 5)),
                 elements=st.floats(-1e3, 1e3, width=32))


@given(tensors, st.integers(0, 5), st.integers(0, 5))
def test_pad_then_slice_roundtrip(x, left, right):
    np.testing.assert_array_equal(slice_time(pad_time(x, left, right), left, x.shape[0]), x)


@given(tensors)
def test_add_commutes(x):
    y = x[::-1].copy()
    np.testing.assert_array_equal(add(x, y), add(y, x))


def test_inputs_not_mutated():
    x = col(1, 2, 3)
    before = x.copy()
    pad_time(x, 1, 1)
    slice_time(x, 0, 2)
    add(x, x)
    np.testing.assert_array_equal(x, before)

"""Dense (T, C) / (B, T, C) float32 tensors and the few time-axis helpers the
convolution code needs.

Tensors are plain numpy arrays, row-major with channels innermost. Every
function here returns a fresh array and never mutates its inputs.
"""
from __future__ import annotations

import functools

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when a tensor or parameter has an inconsistent shape."""


def as_tensor(x, dtype=DTYPE) -> np.ndarray:
    """Validate ``x`` as a (T, C) or (B, T, C) tensor and return it as an array.

    A 1-D input is read as a single-channel signal of shape (T, 1). Pass
    ``dtype=None`` to keep the input's dtype (the integer paths do this).
    """
    arr = np.asarray(x) if dtype is None else np.asarray(x, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim not in (2, 3):
        raise ShapeError(f"expected a (T, C) or (B, T, C) tensor, got shape {arr.shape}")
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all tensor dimensions must be >= 1, got shape {arr.shape}")
    return arr


def batched(fn):
    """Lift an op written for (T, C) tensors to (B, T, C) by looping over B.

    No values are mixed across the batch axis.
    """

    @functools.wraps(fn)
    def wrapper(x, *args, **kwargs):
        x = as_tensor(x)
        if x.ndim == 3:
            return np.stack([fn(xb, *args, **kwargs) for xb in x])
        return fn(x, *args, **kwargs)

    return wrapper


def pad_time(x, left: int, right: int, value: float = 0.0) -> np.ndarray:
    """Pad the time axis with ``left`` and ``right`` copies of ``value``."""
    if left < 0 or right < 0:
        raise ValueError(f"padding must be non-negative, got left={left}, right={right}")
    x = as_tensor(x, dtype=None)
    widths = [(0, 0)] * x.ndim
    widths[-2] = (left, right)
    return np.pad(x, widths, mode="constant", constant_values=value)


def slice_time(x, start: int, length: int) -> np.ndarray:
    """Return the time window ``[start, start + length)`` with all channels."""
    x = as_tensor(x)
    T = x.shape[-2]
    if start < 0 or length < 0 or start + length > T:
        raise IndexError(f"time window [{start}, {start + length}) outside [0, {T})")
    return x[..., start:start + length, :].copy()


def add(a, b) -> np.ndarray:
    """Elementwise sum of two tensors of identical shape."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cannot add tensors of shape {a.shape} and {b.shape}")
    return np.add(a, b, dtype=DTYPE)

"""1-D convolution primitives, activations and inference-mode batch norm.

All ops take (T, C) tensors (or (B, T, C), handled by an outer loop) and
return float32. Weight layouts:

=====================  ==========================  ==========
op                     weight                      bias
=====================  ==========================  ==========
full / strided /       (C_out, D, C_in)            (C_out,)
transposed
depthwise              (m, C)                      (C,)
pointwise              (C_out, C_in)               (C_out,)
fat-pointwise          (C_out, k, C_in)            (C_out,)
=====================  ==========================  ==========

The channel-mixing ops all end in the same ``_affine`` matrix product, so a
fat-pointwise op with k=1 is bit-identical to the pointwise op.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, ShapeError, as_tensor, batched, pad_time


def _f32(a, ndim, name):
    arr = np.ascontiguousarray(a, dtype=DTYPE)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class FullConvParams:
    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1

    def __post_init__(self):
        w = _f32(self.weight, 3, "full conv weight")
        b = _f32(self.bias, 1, "full conv bias")
        if b.shape[0] != w.shape[0]:
            raise ShapeError(f"bias length {b.shape[0]} != C_out {w.shape[0]}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def depth(self) -> int:
        return self.weight.shape[1]

    @property
    def c_in(self) -> int:
        return self.weight.shape[2]

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class DepthwiseParams:
    weight: np.ndarray
    bias: np.ndarray
    dilation: int = 1

    def __post_init__(self):
        w = _f32(self.weight, 2, "depthwise weight")
        b = _f32(self.bias, 1, "depthwise bias")
        if b.shape[0] != w.shape[1]:
            raise ShapeError(f"bias length {b.shape[0]} != channels {w.shape[1]}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def depth(self) -> int:
        return self.weight.shape[0]

    @property
    def channels(self) -> int:
        return self.weight.shape[1]

    @property
    def span(self) -> int:
        return self.dilation * (self.depth - 1) + 1


@dataclass(frozen=True)
class PointwiseParams:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _f32(self.weight, 2, "pointwise weight")
        b = _f32(self.bias, 1, "pointwise bias")
        if b.shape[0] != w.shape[0]:
            raise ShapeError(f"bias length {b.shape[0]} != C_out {w.shape[0]}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class FatPointwiseParams:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = _f32(self.weight, 3, "fat-pointwise weight")
        b = _f32(self.bias, 1, "fat-pointwise bias")
        if b.shape[0] != w.shape[0]:
            raise ShapeError(f"bias length {b.shape[0]} != C_out {w.shape[0]}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def window(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-3

    def __post_init__(self):
        arrs = [_f32(getattr(self, f), 1, f"batch norm {f}") for f in ("gamma", "beta", "mean", "var")]
        if len({a.shape for a in arrs}) != 1:
            raise ShapeError("batch norm vectors must share one length")
        if np.any(arrs[3] + self.eps <= 0):
            raise ValueError("batch norm requires var + eps > 0 for every channel")
        for f, a in zip(("gamma", "beta", "mean", "var"), arrs):
            object.__setattr__(self, f, a)

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def identity(cls, channels: int) -> "BatchNormParams":
        """Exact identity: unit variance with eps=0, so no rounding is introduced."""
        one, zero = np.ones(channels, DTYPE), np.zeros(channels, DTYPE)
        return cls(one, zero, zero, one, eps=0.0)

    def scale(self) -> np.ndarray:
        return self.gamma / np.sqrt(self.var + DTYPE(self.eps))


def _check_channels(x, expected, what):
    if x.shape[-1] != expected:
        raise ShapeError(f"{what} expects {expected} input channels, got {x.shape[-1]}")


def _affine(cols: np.ndarray, wmat: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(cols) @ np.ascontiguousarray(wmat).T + bias


def _taps(xp: np.ndarray, span: int, dilation: int = 1) -> np.ndarray:
    """(T', span-window taps, C) view of a padded tensor, taps spaced by ``dilation``."""
    win = sliding_window_view(xp, span, axis=0)  # (T', C, span)
    return win[:, :, ::dilation].transpose(0, 2, 1)


def same_padding(span: int) -> tuple[int, int]:
    """'Same' padding for an odd or even span; the extra zero goes on the left."""
    return span // 2, (span - 1) // 2


def depthwise_padding(depth: int, dilation: int) -> tuple[int, int]:
    return -(-(depth - 1) // 2) * dilation, ((depth - 1) // 2) * dilation


@batched
def conv1d_full(x, p: FullConvParams) -> np.ndarray:
    """Full convolution, odd depth D, ``D // 2`` zeros padded on both sides.

    With ``stride > 1`` the same padded input is sampled at every
    ``stride``-th position, giving ``ceil(T / stride)`` outputs.
    """
    _check_channels(x, p.c_in, "conv1d_full")
    D = p.depth
    if D % 2 == 0:
        raise ValueError(f"conv1d_full requires an odd depth, got {D}")
    xp = pad_time(x, D // 2, D // 2)
    cols = _taps(xp, D)[:: p.stride]
    T_out = cols.shape[0]
    return _affine(cols.reshape(T_out, D * p.c_in), p.weight.reshape(p.c_out, -1), p.bias)


@batched
def conv1d_depthwise(x, p: DepthwiseParams) -> np.ndarray:
    """Per-channel (optionally dilated) convolution, output length T."""
    _check_channels(x, p.channels, "conv1d_depthwise")
    T = x.shape[0]
    left, right = depthwise_padding(p.depth, p.dilation)
    xp = pad_time(x, left, right)
    out = np.broadcast_to(p.bias, x.shape).copy()
    for d in range(p.depth):
        s = d * p.dilation
        out += xp[s:s + T] * p.weight[d]
    return out


@batched
def conv1d_pointwise(x, p: PointwiseParams) -> np.ndarray:
    _check_channels(x, p.weight.shape[1], "conv1d_pointwise")
    return _affine(x, p.weight, p.bias)


@batched
def conv1d_fat_pointwise(x, p: FatPointwiseParams) -> np.ndarray:
    """Full convolution of window k, any parity, 'same' output length."""
    c_out, k, c_in = p.weight.shape
    _check_channels(x, c_in, "conv1d_fat_pointwise")
    left, right = same_padding(k)
    cols = _taps(pad_time(x, left, right), k)
    return _affine(cols.reshape(x.shape[0], k * c_in), p.weight.reshape(c_out, k * c_in), p.bias)


@batched
def conv1d_strided(x, p: FullConvParams) -> np.ndarray:
    """Depth-to-space compression: non-overlapping windows with depth == stride."""
    _check_channels(x, p.c_in, "conv1d_strided")
    s = p.stride
    if p.depth != s:
        raise ValueError(f"strided compression needs depth == stride, got depth={p.depth}, stride={s}")
    T = x.shape[0]
    if T % s:
        raise ValueError(f"time length {T} is not divisible by stride {s}")
    return _affine(x.reshape(T // s, s * p.c_in), p.weight.reshape(p.c_out, -1), p.bias)


@batched
def conv1d_transposed_strided(x, p: FullConvParams) -> np.ndarray:
    """Decompression: each input step emits ``stride`` output steps."""
    _check_channels(x, p.c_in, "conv1d_transposed_strided")
    s = p.stride
    if p.depth != s:
        raise ValueError(f"transposed convolution needs depth == stride, got depth={p.depth}, stride={s}")
    T = x.shape[0]
    y = np.ascontiguousarray(x) @ p.weight.reshape(p.c_out * s, p.c_in).T  # (T, C_out*s)
    y = y.reshape(T, p.c_out, s).transpose(0, 2, 1).reshape(T * s, p.c_out)
    return y + p.bias


def relu6(x) -> np.ndarray:
    return np.clip(as_tensor(x), 0.0, 6.0)


def swish(x) -> np.ndarray:
    x = as_tensor(x)
    # tanh form of the logistic function never overflows
    return x * (0.5 * (1.0 + np.tanh(0.5 * x)))


def identity(x) -> np.ndarray:
    return as_tensor(x)


ACTIVATIONS = {"relu6": relu6, "swish": swish, "identity": identity}


def softmax_channels(x) -> np.ndarray:
    """Softmax over the channel axis, max-subtracted."""
    x = as_tensor(x).astype(np.float64)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return (z / z.sum(axis=-1, keepdims=True)).astype(DTYPE)


def batchnorm_apply(x, p: BatchNormParams) -> np.ndarray:
    x = as_tensor(x)
    _check_channels(x, p.channels, "batchnorm_apply")
    return (x - p.mean) / np.sqrt(p.var + DTYPE(p.eps)) * p.gamma + p.beta

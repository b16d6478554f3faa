"""Composite layers and the full base-calling network.

Weights live in a flat ``{name: array}`` mapping keyed by canonical layer
paths (``c1.conv.weight``, ``b3.main.1.pw.weight``, ``b3.skip.bn.var``...).
:func:`model_plan` describes the network as a tree of conv layers grouped
into units (conv layers + optional batch norm + optional activation) and
residual blocks; the initialisers, cost model and int8 path walk that plan,
while :func:`run_model` evaluates the network through the composite ops
below.
"""
from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig, ResidualBlockSpec, SeparableSpec
from .conv import (
    ACTIVATIONS,
    BatchNormParams,
    DepthwiseParams,
    FatPointwiseParams,
    FullConvParams,
    PointwiseParams,
    batchnorm_apply,
    conv1d_depthwise,
    conv1d_fat_pointwise,
    conv1d_full,
    conv1d_pointwise,
    conv1d_strided,
    conv1d_transposed_strided,
    softmax_channels,
)
from .tensor import ShapeError, add, as_tensor

BN_FIELDS = ("gamma", "beta", "mean", "var")


class MissingWeightError(KeyError):
    """A tensor required by the architecture is absent from the weight set."""

    def __str__(self):
        return f"missing weight tensor {self.args[0]!r}"


class Scope(Mapping):
    """Read-only view of the weights under ``prefix``, addressed by relative name."""

    def __init__(self, weights: Mapping, prefix: str):
        self.weights = weights
        self.prefix = prefix

    def _full(self, key):
        return f"{self.prefix}.{key}" if self.prefix else key

    def __getitem__(self, key):
        try:
            return self.weights[self._full(key)]
        except KeyError:
            raise MissingWeightError(self._full(key)) from None

    def __iter__(self):
        n = len(self.prefix) + 1
        return (k[n:] for k in self.weights if k.startswith(self.prefix + "."))

    def __len__(self):
        return sum(1 for _ in self)

    def sub(self, name: str) -> "Scope":
        return Scope(self.weights, self._full(name))


def _scope(params) -> Scope:
    return params if isinstance(params, Scope) else Scope(params, "")


# -- layer plan ---------------------------------------------------------------


@dataclass(frozen=True)
class ConvLayer:
    """One convolution primitive.

    ``depth`` is D for full/strided/transposed kernels, m for depthwise,
    k for fat-pointwise and 1 for pointwise.
    """

    name: str
    kind: str
    c_in: int
    c_out: int
    depth: int = 1
    dilation: int = 1
    stride: int = 1

    @property
    def weight_shape(self) -> tuple:
        if self.kind == "depthwise":
            return (self.depth, self.c_in)
        if self.kind == "pointwise":
            return (self.c_out, self.c_in)
        return (self.c_out, self.depth, self.c_in)

    @property
    def bias_shape(self) -> tuple:
        return (self.c_out,)

    def out_len(self, T: int) -> int:
        if self.kind == "full":
            return -(-T // self.stride)
        if self.kind == "strided":
            return T // self.stride
        if self.kind == "transposed":
            return T * self.stride
        return T

    def params(self, weights: Mapping):
        s = Scope(weights, self.name)
        w, b = s["weight"], s["bias"]
        if self.kind == "depthwise":
            return DepthwiseParams(w, b, self.dilation)
        if self.kind == "pointwise":
            return PointwiseParams(w, b)
        if self.kind == "fat_pointwise":
            return FatPointwiseParams(w, b)
        return FullConvParams(w, b, self.stride)


APPLY = {
    "full": conv1d_full,
    "depthwise": conv1d_depthwise,
    "pointwise": conv1d_pointwise,
    "fat_pointwise": conv1d_fat_pointwise,
    "strided": conv1d_strided,
    "transposed": conv1d_transposed_strided,
}


@dataclass(frozen=True)
class Unit:
    """Conv layers, then batch norm (if ``bn``), then ``activation`` (if any).

    ``role`` tags the unit's place in the network; the initialisers use it
    to pick the identity scheme for ``inner`` units.
    """

    name: str
    layers: tuple
    bn: bool
    activation: str | None
    role: str

    @property
    def c_out(self) -> int:
        return self.layers[-1].c_out


@dataclass(frozen=True)
class Residual:
    name: str
    main: tuple
    skip: Unit
    activation: str
    spec: ResidualBlockSpec


def separable_layers(prefix: str, spec: SeparableSpec) -> tuple:
    if spec.order == "depthwise-first":
        return (
            ConvLayer(f"{prefix}.dw", "depthwise", spec.c_in, spec.c_in, spec.depth),
            ConvLayer(f"{prefix}.pw", "pointwise", spec.c_in, spec.c_out),
        )
    return (
        ConvLayer(f"{prefix}.pw", "fat_pointwise", spec.c_in, spec.c_out, spec.k),
        ConvLayer(f"{prefix}.dw", "depthwise", spec.c_out, spec.c_out, spec.depthwise_depth, dilation=spec.k),
    )


def residual_plan(name: str, spec: ResidualBlockSpec) -> Residual:
    C, R, act = spec.channels, spec.repeats, spec.activation
    inner = spec.inner
    if spec.compression is None:
        main = tuple(
            Unit(f"{name}.main.{u}", separable_layers(f"{name}.main.{u}", inner), True,
                 act if u < R - 1 else None, "main")
            for u in range(R)
        )
    else:
        x, Cy = spec.compression.x, spec.inner_channels
        compress = Unit(f"{name}.compress", (ConvLayer(f"{name}.compress.conv", "strided", C, Cy, x, stride=x),),
                        True, act, "compress")
        units = tuple(
            Unit(f"{name}.main.{u}", separable_layers(f"{name}.main.{u}", inner), True, act, "inner")
            for u in range(R - 2)
        )
        decompress = Unit(
            f"{name}.decompress",
            (
                ConvLayer(f"{name}.decompress.dw", "depthwise", Cy, Cy, inner.depthwise_depth),
                ConvLayer(f"{name}.decompress.conv", "transposed", Cy, C, x, stride=x),
            ),
            True, None, "decompress",
        )
        main = (compress, *units, decompress)
    skip = Unit(f"{name}.skip", (ConvLayer(f"{name}.skip.pw", "pointwise", C, C),), True, None, "skip")
    return Residual(name, main, skip, act, spec)


def model_plan(cfg: ModelConfig) -> tuple:
    C, act = cfg.channels, cfg.activation
    plan = [Unit("c1", (ConvLayer("c1.conv", "full", cfg.in_channels, C, cfg.c1.depth, stride=cfg.c1.stride),),
                 True, act, "c1")]
    plan += [residual_plan(f"b{n}", b) for n, b in enumerate(cfg.blocks, 1)]
    plan.append(Unit("c2", separable_layers("c2", cfg.c2), True, act, "c2"))
    plan.append(Unit("c3", (ConvLayer("c3.conv", "full", C, cfg.c3.filters, cfg.c3.depth),), True, act, "c3"))
    plan.append(Unit("decoder", (ConvLayer("decoder.pw", "pointwise", cfg.c3.filters, cfg.n_outputs),),
                     False, None, "decoder"))
    return tuple(plan)


def iter_units(plan):
    """Every unit of a plan in evaluation order (residual main branch before skip)."""
    for node in plan:
        if isinstance(node, Residual):
            yield from node.main
            yield node.skip
        else:
            yield node


def param_shapes(cfg: ModelConfig) -> dict:
    """Canonical tensor names and shapes of a complete weight set, in plan order."""
    shapes = {}
    for unit in iter_units(model_plan(cfg)):
        for layer in unit.layers:
            shapes[f"{layer.name}.weight"] = layer.weight_shape
            shapes[f"{layer.name}.bias"] = layer.bias_shape
        if unit.bn:
            for f in BN_FIELDS:
                shapes[f"{unit.name}.bn.{f}"] = (unit.c_out,)
    return shapes


def check_weights(cfg: ModelConfig, weights: Mapping) -> None:
    """Raise naming the first missing or mis-shaped tensor."""
    for name, shape in param_shapes(cfg).items():
        if name not in weights:
            raise MissingWeightError(name)
        got = tuple(np.shape(weights[name]))
        if got != tuple(shape):
            raise ShapeError(f"weight {name!r} has shape {got}, architecture expects {tuple(shape)}")


def bn_params(params, eps: float) -> BatchNormParams:
    s = _scope(params)
    return BatchNormParams(s["gamma"], s["beta"], s["mean"], s["var"], eps)


# -- composite ops ------------------------------------------------------------


def separable_conv(x, spec: SeparableSpec, params) -> np.ndarray:
    """Depthwise (depth D) then pointwise."""
    if spec.order != "depthwise-first" or spec.k != 1:
        raise ValueError("separable_conv needs a depthwise-first spec with k=1")
    s = _scope(params)
    z = conv1d_depthwise(x, DepthwiseParams(s["dw.weight"], s["dw.bias"]))
    return conv1d_pointwise(z, PointwiseParams(s["pw.weight"], s["pw.bias"]))


def blueprint_separable_conv(x, spec: SeparableSpec, params) -> np.ndarray:
    """Pointwise then depthwise (depth D); the pointwise kernel is stored (C_out, 1, C_in)."""
    if spec.order != "pointwise-first" or spec.k != 1:
        raise ValueError("blueprint_separable_conv needs a pointwise-first spec with k=1")
    s = _scope(params)
    w = s["pw.weight"]
    if np.ndim(w) == 3:
        if np.shape(w)[1] != 1:
            raise ShapeError(f"blueprint pointwise kernel must have window 1, got shape {np.shape(w)}")
        w = np.asarray(w)[:, 0, :]
    z = conv1d_pointwise(x, PointwiseParams(w, s["pw.bias"]))
    return conv1d_depthwise(z, DepthwiseParams(s["dw.weight"], s["dw.bias"]))


def k_blueprint_separable_conv(x, spec: SeparableSpec, params) -> np.ndarray:
    """Fat-pointwise of window k, then depthwise of depth D/k with dilation k."""
    if spec.order != "pointwise-first":
        raise ValueError("k_blueprint_separable_conv needs a pointwise-first spec")
    if spec.depth % spec.k:
        raise ValueError(f"k={spec.k} does not divide depth {spec.depth}")
    s = _scope(params)
    z = conv1d_fat_pointwise(x, FatPointwiseParams(s["pw.weight"], s["pw.bias"]))
    return conv1d_depthwise(z, DepthwiseParams(s["dw.weight"], s["dw.bias"], dilation=spec.k))


def factorized_conv(x, spec: SeparableSpec, params) -> np.ndarray:
    if spec.order == "depthwise-first":
        return separable_conv(x, spec, params)
    return k_blueprint_separable_conv(x, spec, params)


def c_block(x, conv, bn: BatchNormParams | None, activation: str | None) -> np.ndarray:
    """``activation(batchnorm(conv(x)))``; ``bn=None`` or ``activation=None`` skip that stage."""
    y = conv(x)
    if bn is not None:
        y = batchnorm_apply(y, bn)
    if activation is not None:
        y = ACTIVATIONS[activation](y)
    return y


def _skip(x, s: Scope, eps):
    pw = PointwiseParams(s["skip.pw.weight"], s["skip.pw.bias"])
    return c_block(x, lambda v: conv1d_pointwise(v, pw), bn_params(s.sub("skip.bn"), eps), None)


def b_block_original(x, spec: ResidualBlockSpec, params, eps: float = 1e-3) -> np.ndarray:
    """Residual block: ``spec.repeats`` factorised-conv units plus a pointwise skip."""
    if spec.compression is not None:
        raise ValueError("b_block_original takes an uncompressed spec")
    x = as_tensor(x)
    s = _scope(params)
    inner = spec.inner
    y = x
    for u in range(spec.repeats):
        unit = s.sub(f"main.{u}")
        act = spec.activation if u < spec.repeats - 1 else None
        y = c_block(y, lambda v: factorized_conv(v, inner, unit), bn_params(unit.sub("bn"), eps), act)
    return ACTIVATIONS[spec.activation](add(y, _skip(x, s, eps)))


def d2s_residual_block(x, spec: ResidualBlockSpec, params, eps: float = 1e-3) -> np.ndarray:
    """Residual block whose main branch runs on a depth-to-space compressed tensor.

    (T, C) -> strided conv -> (T/x, C*y) -> R-2 factorised units ->
    depthwise -> transposed strided conv -> (T, C), summed with the skip.
    """
    if spec.compression is None:
        raise ValueError("d2s_residual_block needs a compression spec")
    x = as_tensor(x)
    cx = spec.compression.x
    if x.shape[-2] % cx:
        raise ValueError(f"time length {x.shape[-2]} is not divisible by compression x={cx}")
    s = _scope(params)
    inner, act = spec.inner, spec.activation

    comp = FullConvParams(s["compress.conv.weight"], s["compress.conv.bias"], stride=cx)
    y = c_block(x, lambda v: conv1d_strided(v, comp), bn_params(s.sub("compress.bn"), eps), act)
    for u in range(spec.repeats - 2):
        unit = s.sub(f"main.{u}")
        y = c_block(y, lambda v: factorized_conv(v, inner, unit), bn_params(unit.sub("bn"), eps), act)
    dw = DepthwiseParams(s["decompress.dw.weight"], s["decompress.dw.bias"])
    dec = FullConvParams(s["decompress.conv.weight"], s["decompress.conv.bias"], stride=cx)
    y = c_block(y, lambda v: conv1d_transposed_strided(conv1d_depthwise(v, dw), dec),
                bn_params(s.sub("decompress.bn"), eps), None)
    return ACTIVATIONS[act](add(y, _skip(x, s, eps)))


def residual_block(x, spec: ResidualBlockSpec, params, eps: float = 1e-3) -> np.ndarray:
    if spec.compression is None:
        return b_block_original(x, spec, params, eps)
    return d2s_residual_block(x, spec, params, eps)


def decoder_block(x, params) -> np.ndarray:
    """Pointwise to the five outputs (A, C, G, T, blank), then softmax."""
    s = _scope(params)
    return softmax_channels(conv1d_pointwise(x, PointwiseParams(s["pw.weight"], s["pw.bias"])))


def check_input_length(cfg: ModelConfig, T: int) -> None:
    if T % 9:
        raise ValueError(f"input length {T} is not a multiple of 9")
    for n, b in enumerate(cfg.blocks, 1):
        if b.compression is not None and (T // 3) % b.compression.x:
            raise ValueError(f"block b{n}: length {T // 3} not divisible by compression x={b.compression.x}")


def run_model(cfg: ModelConfig, weights: Mapping, x) -> np.ndarray:
    """Evaluate the network on a (T, 1) signal (or (B, T, 1) batch); returns (T/3, 5) probabilities."""
    check_weights(cfg, weights)
    x = as_tensor(x)
    if x.ndim == 3:
        return np.stack([run_model(cfg, weights, xb) for xb in x])
    if x.shape[1] != cfg.in_channels:
        raise ShapeError(f"model expects {cfg.in_channels} input channel(s), got {x.shape[1]}")
    check_input_length(cfg, x.shape[0])
    w = Scope(weights, "")
    eps, act = cfg.bn_eps, cfg.activation

    c1 = FullConvParams(w["c1.conv.weight"], w["c1.conv.bias"], stride=cfg.c1.stride)
    y = c_block(x, lambda v: conv1d_full(v, c1), bn_params(w.sub("c1.bn"), eps), act)
    for n, spec in enumerate(cfg.blocks, 1):
        y = residual_block(y, spec, w.sub(f"b{n}"), eps)
    y = c_block(y, lambda v: separable_conv(v, cfg.c2, w.sub("c2")), bn_params(w.sub("c2.bn"), eps), act)
    c3 = FullConvParams(w["c3.conv.weight"], w["c3.conv.bias"])
    y = c_block(y, lambda v: conv1d_full(v, c3), bn_params(w.sub("c3.bn"), eps), act)
    return decoder_block(y, w.sub("decoder"))

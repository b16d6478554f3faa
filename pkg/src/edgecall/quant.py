"""Post-training int8 quantization with batch-norm folding and fused ReLU6.

Per-tensor affine quantization: weights are symmetric (zero point 0),
activations asymmetric, and every tensor produced by a ReLU6 uses the fixed
range [0, 6]. Convolutions accumulate int8 x int8 products into int32 and
requantize with a real-valued multiplier. A fused ReLU6 is a clip of the
int32 accumulator to ``[0, round(6 / (s_in * s_w))]``, i.e. the output code
range ``[zp_out, round(6 / s_out) + zp_out]``. The final softmax runs in
floating point.

Integer products are accumulated through float64 matrix products: every
partial sum is an integer far below 2**53, so the result is exact and
independent of summation order.
"""
from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .blocks import (
    APPLY,
    BN_FIELDS,
    ConvLayer,
    Residual,
    Unit,
    check_input_length,
    check_weights,
    iter_units,
    model_plan,
)
from .config import ModelConfig
from .conv import (
    ACTIVATIONS,
    BatchNormParams,
    DepthwiseParams,
    FullConvParams,
    _taps,
    depthwise_padding,
    same_padding,
    softmax_channels,
)
from .tensor import DTYPE, ShapeError, as_tensor

QMIN, QMAX = -128, 127
INT32_MIN, INT32_MAX = -(2**31), 2**31 - 1
SCALE_FLOOR = 1e-8
MEMORY_BUDGET = 8 * 2**20


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int = 0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not QMIN <= self.zero_point <= QMAX:
            raise ValueError(f"zero point {self.zero_point} outside [{QMIN}, {QMAX}]")


RELU6_QPARAMS = QuantParams(6.0 / 255.0, -128)


def round_half_away(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def quantize_tensor(x, q: QuantParams) -> np.ndarray:
    codes = round_half_away(np.asarray(x, dtype=np.float64) / q.scale) + q.zero_point
    return np.clip(codes, QMIN, QMAX).astype(np.int8)


def dequantize_tensor(q8, q: QuantParams) -> np.ndarray:
    return ((np.asarray(q8, dtype=np.float64) - q.zero_point) * q.scale).astype(DTYPE)


def weight_qparams(w) -> QuantParams:
    """Symmetric: scale = max|w| / 127, zero point 0."""
    m = float(np.max(np.abs(w))) if np.size(w) else 0.0
    return QuantParams(max(m / QMAX, SCALE_FLOOR), 0)


def activation_qparams(lo: float, hi: float) -> QuantParams:
    """Asymmetric over [min(lo, 0), max(hi, 0)] so that 0.0 is exactly representable."""
    lo, hi = min(float(lo), 0.0), max(float(hi), 0.0)
    scale = max((hi - lo) / (QMAX - QMIN), SCALE_FLOOR)
    zp = int(np.clip(round_half_away(QMIN - lo / scale), QMIN, QMAX))
    return QuantParams(scale, zp)


def fold_batchnorm(p, bn: BatchNormParams):
    """Absorb an inference batch norm into the preceding conv's output channels."""
    s = bn.scale()
    if isinstance(p, DepthwiseParams):
        if p.channels != bn.channels:
            raise ShapeError(f"batch norm has {bn.channels} channels, depthwise has {p.channels}")
        return DepthwiseParams(p.weight * s[None, :], (p.bias - bn.mean) * s + bn.beta, p.dilation)
    c_out = p.weight.shape[0]
    if c_out != bn.channels:
        raise ShapeError(f"batch norm has {bn.channels} channels, conv has {c_out} outputs")
    w = p.weight * s.reshape((-1,) + (1,) * (p.weight.ndim - 1))
    b = (p.bias - bn.mean) * s + bn.beta
    if isinstance(p, FullConvParams):
        return FullConvParams(w, b, p.stride)
    return type(p)(w, b)


def fold_model(cfg: ModelConfig, weights: Mapping) -> dict:
    """Float weight set with every unit's batch norm folded into its last conv."""
    check_weights(cfg, weights)
    folded = {}
    for unit in iter_units(model_plan(cfg)):
        for i, layer in enumerate(unit.layers):
            p = layer.params(weights)
            if unit.bn and i == len(unit.layers) - 1:
                bn = BatchNormParams(*(weights[f"{unit.name}.bn.{f}"] for f in BN_FIELDS), eps=cfg.bn_eps)
                p = fold_batchnorm(p, bn)
            folded[f"{layer.name}.weight"] = p.weight
            folded[f"{layer.name}.bias"] = p.bias
    return folded


# -- float reference of the folded network, with observation hooks ------------


def _act_kind(name):
    return None if name in (None, "identity") else name


def run_folded(cfg: ModelConfig, folded: Mapping, x, observe=None) -> np.ndarray:
    """Evaluate the BN-folded network in float32, reporting each quantization point."""
    obs = observe or (lambda name, v: None)
    x = as_tensor(x)
    check_input_length(cfg, x.shape[0])
    obs("input", x)

    def unit(u: Unit, y):
        for layer in u.layers:
            y = APPLY[layer.kind](y, layer.params(folded))
            obs(layer.name, y)
        act = _act_kind(u.activation)
        if act:
            y = ACTIVATIONS[act](y)
            obs(f"{u.name}.act", y)
        return y

    y = x
    for node in model_plan(cfg):
        if isinstance(node, Residual):
            a = y
            for u in node.main:
                a = unit(u, a)
            s = a + unit(node.skip, y)
            obs(f"{node.name}.sum", s)
            act = _act_kind(node.activation)
            y = ACTIVATIONS[act](s) if act else s
            obs(f"{node.name}.out", y)
        else:
            y = unit(node, y)
    return softmax_channels(y)


def calibrate(cfg: ModelConfig, folded: Mapping, samples) -> dict:
    """Activation QuantParams from observed min/max over the calibration inputs."""
    samples = list(samples)
    if not samples:
        raise ValueError("calibration needs at least one input")
    ranges = {}

    def observe(name, v):
        lo, hi = float(np.min(v)), float(np.max(v))
        old = ranges.get(name)
        ranges[name] = (lo, hi) if old is None else (min(old[0], lo), max(old[1], hi))

    for s in samples:
        run_folded(cfg, folded, s, observe)
    return {name: activation_qparams(lo, hi) for name, (lo, hi) in ranges.items()}


# -- quantized model ------------------------------------------------------------


@dataclass
class QuantizedModel:
    """int8 weights, int32 biases and per-tensor QuantParams.

    ``qparams`` holds weight/bias params under the tensor name and
    activation params under ``act/<point>``.
    """

    cfg: ModelConfig | None
    tensors: dict = field(default_factory=dict)
    qparams: dict = field(default_factory=dict)
    bn_folded: bool = True
    relu6_fused: bool = True

    def act(self, point: str) -> QuantParams:
        return self.qparams[f"act/{point}"]


def _layer_points(cfg: ModelConfig):
    """(layer, input point, output point, fused relu6) for every conv layer, plus extra points."""
    out = []
    prev = "input"

    def unit(u: Unit, src):
        for i, layer in enumerate(u.layers):
            last = i == len(u.layers) - 1
            fused = last and _act_kind(u.activation) == "relu6"
            dst = f"{u.name}.act" if fused else layer.name
            out.append((layer, src, dst, fused))
            src = dst
        if _act_kind(u.activation) == "swish":
            src = f"{u.name}.act"
        return src

    for node in model_plan(cfg):
        if isinstance(node, Residual):
            a = prev
            for u in node.main:
                a = unit(u, a)
            unit(node.skip, prev)
            prev = f"{node.name}.out"
        else:
            prev = unit(node, prev)
    return out


def quantize_model(cfg: ModelConfig, weights: Mapping, calibration) -> QuantizedModel:
    folded = fold_model(cfg, weights)
    acts = calibrate(cfg, folded, calibration)
    qm = QuantizedModel(cfg)
    for name, q in acts.items():
        qm.qparams[f"act/{name}"] = q
    for node in model_plan(cfg):
        if isinstance(node, Residual) and _act_kind(node.activation) == "relu6":
            qm.qparams[f"act/{node.name}.out"] = RELU6_QPARAMS
    for layer, src, dst, fused in _layer_points(cfg):
        if fused:
            qm.qparams[f"act/{dst}"] = RELU6_QPARAMS
        w = folded[f"{layer.name}.weight"]
        wq = weight_qparams(w)
        s_in = qm.act(src).scale
        bq = QuantParams(s_in * wq.scale, 0)
        qm.tensors[f"{layer.name}.weight"] = quantize_tensor(w, wq)
        bias = round_half_away(np.asarray(folded[f"{layer.name}.bias"], np.float64) / bq.scale)
        qm.tensors[f"{layer.name}.bias"] = np.clip(bias, INT32_MIN, INT32_MAX).astype(np.int32)
        qm.qparams[f"{layer.name}.weight"] = wq
        qm.qparams[f"{layer.name}.bias"] = bq
    return qm


def _int_acc(layer: ConvLayer, xi: np.ndarray, wq: np.ndarray) -> np.ndarray:
    """Exact integer accumulator of one conv layer on zero-point-centred inputs."""
    x = xi.astype(np.float64)
    w = wq.astype(np.float64)
    T = x.shape[0]
    if layer.kind == "depthwise":
        left, right = depthwise_padding(layer.depth, layer.dilation)
        xp = np.pad(x, ((left, right), (0, 0)))
        acc = np.zeros_like(x)
        for d in range(layer.depth):
            s = d * layer.dilation
            acc += xp[s:s + T] * w[d]
        return acc
    if layer.kind == "pointwise":
        return x @ w.T
    if layer.kind == "fat_pointwise":
        k = layer.depth
        left, right = same_padding(k)
        cols = _taps(np.pad(x, ((left, right), (0, 0))), k).reshape(T, -1)
        return cols @ w.reshape(layer.c_out, -1).T
    if layer.kind == "full":
        D = layer.depth
        cols = _taps(np.pad(x, ((D // 2, D // 2), (0, 0))), D)[:: layer.stride]
        return cols.reshape(cols.shape[0], -1) @ w.reshape(layer.c_out, -1).T
    if layer.kind == "strided":
        s = layer.stride
        return x.reshape(T // s, s * layer.c_in) @ w.reshape(layer.c_out, -1).T
    if layer.kind == "transposed":
        s = layer.stride
        y = x @ w.reshape(layer.c_out * s, layer.c_in).T
        return y.reshape(T, layer.c_out, s).transpose(0, 2, 1).reshape(T * s, layer.c_out)
    raise ValueError(f"unknown layer kind {layer.kind!r}")


def _requant(real, q: QuantParams, lo=QMIN, hi=QMAX):
    codes = round_half_away(real / q.scale) + q.zero_point
    return np.clip(codes, lo, hi).astype(np.int8)


def quantized_conv(qm: QuantizedModel, layer: ConvLayer, q_in: np.ndarray, src: str, dst: str, fused: bool):
    qi, qo = qm.act(src), qm.act(dst)
    wq = qm.qparams[f"{layer.name}.weight"]
    acc = _int_acc(layer, q_in.astype(np.int32) - qi.zero_point, qm.tensors[f"{layer.name}.weight"])
    acc = acc + qm.tensors[f"{layer.name}.bias"].astype(np.float64)
    acc = np.clip(acc, INT32_MIN, INT32_MAX)
    m = qi.scale * wq.scale
    if fused:
        acc = np.clip(acc, 0, round_half_away(6.0 / m))
    return _requant(acc * m, qo)


def quantized_run_model(qm: QuantizedModel, x) -> np.ndarray:
    """int8 inference on a (T, 1) or (B, T, 1) input; returns float (T/3, 5) probabilities."""
    cfg = qm.cfg
    x = as_tensor(x)
    if x.ndim == 3:
        return np.stack([quantized_run_model(qm, xb) for xb in x])
    check_input_length(cfg, x.shape[0])
    points = {(layer.name): (src, dst, fused) for layer, src, dst, fused in _layer_points(cfg)}

    def unit(u: Unit, q):
        for layer in u.layers:
            src, dst, fused = points[layer.name]
            q = quantized_conv(qm, layer, q, src, dst, fused)
        if _act_kind(u.activation) == "swish":
            pre = points[u.layers[-1].name][1]
            q = _requant(ACTIVATIONS["swish"](dequantize_tensor(q, qm.act(pre))), qm.act(f"{u.name}.act"))
        return q, _out_point(u)

    def _out_point(u: Unit):
        return points[u.layers[-1].name][1] if _act_kind(u.activation) != "swish" else f"{u.name}.act"

    q = quantize_tensor(x, qm.act("input"))
    for node in model_plan(cfg):
        if isinstance(node, Residual):
            a = q
            for u in node.main:
                a, pa = unit(u, a)
            b, pb = unit(node.skip, q)
            real = dequantize_tensor(a, qm.act(pa)).astype(np.float64) + dequantize_tensor(b, qm.act(pb))
            act = _act_kind(node.activation)
            out = qm.act(f"{node.name}.out")
            if act == "relu6":
                q = _requant(np.clip(real, 0.0, 6.0), out)
            elif act == "swish":
                s = _requant(real, qm.act(f"{node.name}.sum"))
                q = _requant(ACTIVATIONS["swish"](dequantize_tensor(s, qm.act(f"{node.name}.sum"))), out)
            else:
                q = _requant(real, out)
        else:
            q, p = unit(node, q)
    logits = dequantize_tensor(q, qm.act(p))
    return softmax_channels(logits)


# -- memory footprint -----------------------------------------------------------


@dataclass(frozen=True)
class Footprint:
    weight_bytes: int
    bias_bytes: int
    activation_bytes: int
    budget: int = MEMORY_BUDGET

    @property
    def total(self) -> int:
        return self.weight_bytes + self.bias_bytes + self.activation_bytes

    @property
    def over_budget(self) -> bool:
        return self.total > self.budget


def peak_activation_bytes(cfg: ModelConfig, T: int, batch: int = 1, bytes_per_value: int = 1) -> int:
    """Largest live activation set (layer input + output + a held residual input)."""
    peak = 0

    def walk(units, T_cur, held):
        nonlocal peak
        for u in units:
            for layer in u.layers:
                T_out = layer.out_len(T_cur)
                live = T_cur * layer.c_in + T_out * layer.c_out + held
                peak = max(peak, live)
                T_cur = T_out
        return T_cur

    T_cur = T
    for node in model_plan(cfg):
        if isinstance(node, Residual):
            held = T_cur * node.spec.channels
            walk(node.main, T_cur, held)
            walk((node.skip,), T_cur, held)
        else:
            T_cur = walk((node,), T_cur, 0)
    return peak * batch * bytes_per_value


def footprint(qm: QuantizedModel, T: int | None = None, batch: int | None = None) -> Footprint:
    weight_bytes = sum(a.nbytes for n, a in qm.tensors.items() if n.endswith(".weight"))
    bias_bytes = sum(a.nbytes for n, a in qm.tensors.items() if n.endswith(".bias"))
    act = 0
    if qm.cfg is not None:
        T = qm.cfg.chunk_len if T is None else T
        batch = qm.cfg.batch if batch is None else batch
        act = peak_activation_bytes(qm.cfg, T, batch)
    return Footprint(weight_bytes, bias_bytes, act)


def model_weight_bytes(cfg: ModelConfig) -> int:
    """int8 weights plus int32 biases of the folded model, without building it."""
    total = 0
    for unit in iter_units(model_plan(cfg)):
        for layer in unit.layers:
            total += math.prod(layer.weight_shape) + 4 * layer.c_out
    return total

"""Weight initialisation: Glorot-uniform, near-identity for factorised units, zeros."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import ConvLayer, iter_units, model_plan, param_shapes
from .config import ConfigError, ModelConfig, SeparableSpec
from .tensor import DTYPE

SCHEMES = ("glorot", "identity", "zeros")
DEFAULT_EPSILON = 0.02


@dataclass(frozen=True)
class InitSpec:
    scheme: str = "glorot"
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0

    def __post_init__(self):
        scheme = {"glorot-uniform": "glorot"}.get(self.scheme, self.scheme)
        if scheme not in SCHEMES:
            raise ValueError(f"unknown init scheme {self.scheme!r}, expected one of {SCHEMES}")
        object.__setattr__(self, "scheme", scheme)
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_uniform(shape, fan_in: int, fan_out: int, seed=None) -> np.ndarray:
    """I.i.d. samples from U(-limit, limit), limit = sqrt(6 / (fan_in + fan_out)).

    ``seed`` may be an int or a ``numpy.random.Generator`` (consumed in place).
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    limit = glorot_limit(fan_in, fan_out)
    w = _rng(seed).uniform(-limit, limit, size=shape).astype(DTYPE)
    # float32 rounding can land a sample exactly on the limit; pull it inside
    return np.clip(w, -DTYPE(limit), DTYPE(limit))


def fans(layer: ConvLayer) -> tuple[int, int]:
    if layer.kind == "depthwise":
        return layer.depth, layer.depth
    if layer.kind == "pointwise":
        return layer.c_in, layer.c_out
    return layer.depth * layer.c_in, layer.depth * layer.c_out


def identity_init_ksep(spec: SeparableSpec, epsilon: float = DEFAULT_EPSILON, seed=None) -> dict:
    """Near-identity weights for a pointwise-first factorised unit.

    The depthwise kernel is a delta at tap ``(D//k)//2`` for every channel.
    The fat-pointwise kernel is zero except its centre tap ``k//2``, which
    holds the identity matrix plus U(-epsilon, epsilon) noise. Biases are
    zero. Returns ``{"pw.weight", "pw.bias", "dw.weight", "dw.bias"}``.
    """
    if spec.c_in != spec.c_out:
        raise ConfigError(f"identity init needs c_in == c_out, got {spec.c_in} != {spec.c_out}")
    if spec.depth % spec.k:
        raise ConfigError(f"k={spec.k} does not divide depth {spec.depth}")
    C, k, m = spec.c_in, spec.k, spec.depthwise_depth
    pw = np.zeros((C, k, C), DTYPE)
    centre = np.eye(C, dtype=DTYPE)
    if epsilon > 0:
        centre += _rng(seed).uniform(-epsilon, epsilon, size=(C, C)).astype(DTYPE)
    pw[:, k // 2, :] = centre
    dw = np.zeros((m, C), DTYPE)
    dw[m // 2, :] = 1.0
    if spec.order == "depthwise-first":
        return {"dw.weight": dw, "dw.bias": np.zeros(C, DTYPE), "pw.weight": centre, "pw.bias": np.zeros(C, DTYPE)}
    return {"pw.weight": pw, "pw.bias": np.zeros(C, DTYPE), "dw.weight": dw, "dw.bias": np.zeros(C, DTYPE)}


def init_model(cfg: ModelConfig, spec: InitSpec | None = None) -> dict:
    """A complete weight set for ``cfg``.

    ``identity`` initialises the factorised units inside compressed main
    branches to near-identity and everything else Glorot-uniform. Batch
    norms start at gamma=1, beta=0, mean=0, var=1 under every scheme.
    """
    spec = spec or InitSpec()
    rng = np.random.default_rng(spec.seed)
    weights = {}
    for unit in iter_units(model_plan(cfg)):
        if spec.scheme == "identity" and unit.role == "inner":
            block = cfg.blocks[int(unit.name.split(".")[0][1:]) - 1]
            for rel, arr in identity_init_ksep(block.inner, spec.epsilon, rng).items():
                weights[f"{unit.name}.{rel}"] = arr
        else:
            for layer in unit.layers:
                if spec.scheme == "zeros":
                    w = np.zeros(layer.weight_shape, DTYPE)
                else:
                    w = glorot_uniform(layer.weight_shape, *fans(layer), seed=rng)
                weights[f"{layer.name}.weight"] = w
                weights[f"{layer.name}.bias"] = np.zeros(layer.bias_shape, DTYPE)
        if unit.bn:
            C = unit.c_out
            weights[f"{unit.name}.bn.gamma"] = np.ones(C, DTYPE)
            weights[f"{unit.name}.bn.beta"] = np.zeros(C, DTYPE)
            weights[f"{unit.name}.bn.mean"] = np.zeros(C, DTYPE)
            weights[f"{unit.name}.bn.var"] = np.ones(C, DTYPE)
    return {name: weights[name] for name in param_shapes(cfg)}


def fit_batchnorm_statistics(cfg: ModelConfig, weights: dict, samples) -> dict:
    """Copy of ``weights`` with every batch norm's running mean/var measured on ``samples``.

    Units are visited in evaluation order, so each batch norm sees inputs
    already normalised by the ones before it. This gives an untrained
    network the activation scale a trained one would have.
    """
    from .blocks import APPLY, Residual
    from .conv import ACTIVATIONS, BatchNormParams, batchnorm_apply

    weights = dict(weights)
    xs = [np.asarray(s, DTYPE).reshape(-1, cfg.in_channels) for s in samples]
    if not xs:
        raise ValueError("need at least one sample to estimate batch-norm statistics")

    def unit(u, ys):
        for layer in u.layers:
            p = layer.params(weights)
            ys = [APPLY[layer.kind](y, p) for y in ys]
        if u.bn:
            flat = np.concatenate(ys).astype(np.float64)
            weights[f"{u.name}.bn.mean"] = flat.mean(axis=0).astype(DTYPE)
            weights[f"{u.name}.bn.var"] = flat.var(axis=0).astype(DTYPE)
            bn = BatchNormParams(*(weights[f"{u.name}.bn.{f}"] for f in ("gamma", "beta", "mean", "var")),
                                 eps=cfg.bn_eps)
            ys = [batchnorm_apply(y, bn) for y in ys]
        if u.activation:
            ys = [ACTIVATIONS[u.activation](y) for y in ys]
        return ys

    for node in model_plan(cfg):
        if isinstance(node, Residual):
            main = xs
            for u in node.main:
                main = unit(u, main)
            skip = unit(node.skip, xs)
            xs = [ACTIVATIONS[node.activation](a + b) for a, b in zip(main, skip)]
        else:
            xs = unit(node, xs)
    return weights

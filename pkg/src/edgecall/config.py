"""Declarative model configuration.

A config file is JSON with a fixed schema; every field is optional and
falls back to the default architecture (128 main channels, C1 depth 9
stride 3, five residual blocks of five units each with depth-21
3-blueprint-separable convolutions and 3:2 depth-to-space compression,
C2 separable depth 11, C3 full depth 7 to 64 channels, 5-way decoder)::

    {
      "schema": "edgecall-config/1",
      "channels": 128,
      "chunk_len": 5004,
      "batch": 4,
      "activation": "relu6",
      "bn_eps": 0.001,
      "c1": {"depth": 9, "stride": 3},
      "residual": {"count": 5, "repeats": 5, "depth": 21, "k": 3,
                   "order": "pointwise-first", "compression": [3, 2]},
      "blocks": [{"depth": 15}, {}, {}, {}, {}],
      "c2": {"depth": 11},
      "c3": {"filters": 64, "depth": 7}
    }

``blocks`` optionally overrides the shared ``residual`` settings per block.
``"compression": null`` selects the plain residual block.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

SCHEMA = "edgecall-config/1"
MAX_CHANNELS = 128
N_OUTPUTS = 5
ORDERS = ("depthwise-first", "pointwise-first")


class ConfigError(ValueError):
    """A config file could not be parsed or violates an invariant."""


@dataclass(frozen=True)
class SeparableSpec:
    """A factorised convolution of overall depth D.

    ``depthwise-first`` with k=1 is the classic separable convolution,
    ``pointwise-first`` with k=1 the blueprint variant, and
    ``pointwise-first`` with k>1 the k-blueprint variant (fat-pointwise of
    window k, then depthwise of depth D/k dilated by k).
    """

    depth: int
    c_in: int
    c_out: int
    order: str = "pointwise-first"
    k: int = 1

    def __post_init__(self):
        if self.order not in ORDERS:
            raise ConfigError(f"order must be one of {ORDERS}, got {self.order!r}")
        if self.depth < 1 or self.k < 1 or self.c_in < 1 or self.c_out < 1:
            raise ConfigError(f"depth, k and channel counts must be >= 1: {self}")
        if self.depth % self.k:
            raise ConfigError(f"k={self.k} does not divide depth {self.depth}")
        if self.order == "depthwise-first" and self.k != 1:
            raise ConfigError("depthwise-first separable convolutions only support k=1")

    @property
    def depthwise_depth(self) -> int:
        return self.depth // self.k


@dataclass(frozen=True)
class CompressionSpec:
    """Depth-to-space ratio x:y, x time steps of C channels -> 1 step of C*y."""

    x: int = 3
    y: int = 2

    def __post_init__(self):
        if self.x < 1 or self.y < 1:
            raise ConfigError(f"compression ratio must be positive, got {self.x}:{self.y}")


@dataclass(frozen=True)
class ResidualBlockSpec:
    channels: int
    repeats: int = 5
    depth: int = 21
    k: int = 3
    order: str = "pointwise-first"
    compression: CompressionSpec | None = field(default_factory=CompressionSpec)
    activation: str = "relu6"

    def __post_init__(self):
        if self.compression is not None and self.repeats < 3:
            raise ConfigError(f"a compressed block needs repeats >= 3, got {self.repeats}")
        if self.repeats < 1:
            raise ConfigError(f"repeats must be >= 1, got {self.repeats}")
        self.inner  # validates depth/k/order

    @property
    def inner_channels(self) -> int:
        return self.channels * (self.compression.y if self.compression else 1)

    @property
    def inner(self) -> SeparableSpec:
        c = self.inner_channels
        return SeparableSpec(self.depth, c, c, self.order, self.k)


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    depth: int
    stride: int = 1


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 128
    c1: ConvSpec | None = None
    blocks: tuple = ()
    c2_depth: int = 11
    c3: ConvSpec = ConvSpec(64, 7)
    activation: str = "relu6"
    bn_eps: float = 1e-3
    chunk_len: int = 5004
    batch: int = 4
    in_channels: int = 1

    def __post_init__(self):
        if self.c1 is None:
            object.__setattr__(self, "c1", ConvSpec(self.channels, 9, 3))
        if not self.blocks:
            object.__setattr__(
                self, "blocks", tuple(ResidualBlockSpec(self.channels, activation=self.activation) for _ in range(5))
            )
        validate(self)

    @property
    def n_outputs(self) -> int:
        return N_OUTPUTS

    @property
    def c2(self) -> SeparableSpec:
        return SeparableSpec(self.c2_depth, self.channels, self.channels, "depthwise-first", 1)

    def with_depth(self, depth: int, k: int | None = None) -> "ModelConfig":
        """Copy with every residual block's kernel depth (and optionally k) replaced."""
        blocks = tuple(replace(b, depth=depth, k=b.k if k is None else k) for b in self.blocks)
        return replace(self, blocks=blocks)


def validate(cfg: ModelConfig) -> None:
    from .conv import ACTIVATIONS

    for name, c in (("channels", cfg.channels), ("c1.filters", cfg.c1.filters), ("c3.filters", cfg.c3.filters)):
        if c > MAX_CHANNELS:
            raise ConfigError(f"{name}={c} exceeds the main-path channel cap of {MAX_CHANNELS}")
        if c < 1:
            raise ConfigError(f"{name} must be >= 1, got {c}")
    if cfg.c1.filters != cfg.channels:
        raise ConfigError(f"c1.filters={cfg.c1.filters} must equal channels={cfg.channels}")
    if cfg.c1.stride != 3:
        raise ConfigError(f"c1.stride must be 3, got {cfg.c1.stride}")
    for name, d in (("c1.depth", cfg.c1.depth), ("c3.depth", cfg.c3.depth)):
        if d < 1 or d % 2 == 0:
            raise ConfigError(f"{name} must be a positive odd number, got {d}")
    if cfg.c2_depth < 1:
        raise ConfigError(f"c2.depth must be >= 1, got {cfg.c2_depth}")
    if cfg.chunk_len % 9 or cfg.chunk_len < 9:
        raise ConfigError(f"chunk_len={cfg.chunk_len} must be a positive multiple of 9")
    if cfg.batch < 1:
        raise ConfigError(f"batch must be >= 1, got {cfg.batch}")
    if cfg.activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {cfg.activation!r}")
    if cfg.bn_eps < 0:
        raise ConfigError(f"bn_eps must be >= 0, got {cfg.bn_eps}")
    for n, b in enumerate(cfg.blocks, 1):
        if b.channels != cfg.channels:
            raise ConfigError(f"block b{n} has {b.channels} channels, expected {cfg.channels}")
        if b.activation not in ACTIVATIONS:
            raise ConfigError(f"block b{n}: unknown activation {b.activation!r}")
        if b.compression is not None and (cfg.chunk_len // 3) % b.compression.x:
            raise ConfigError(
                f"block b{n}: compressed length needs chunk_len/3={cfg.chunk_len // 3} "
                f"divisible by x={b.compression.x}"
            )


_TOP_KEYS = {"schema", "channels", "chunk_len", "batch", "activation", "bn_eps", "c1", "residual", "blocks", "c2", "c3"}
_RESIDUAL_KEYS = {"count", "repeats", "depth", "k", "order", "compression", "activation"}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")


def _compression(value, where):
    if value is None:
        return None
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(f"{where}.compression must be [x, y] or null, got {value!r}")
    return CompressionSpec(int(value[0]), int(value[1]))


def from_dict(d: dict) -> ModelConfig:
    _check_keys(d, _TOP_KEYS, "config")
    schema = d.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError(f"unsupported schema {schema!r}, expected {SCHEMA!r}")
    try:
        channels = int(d.get("channels", 128))
        activation = d.get("activation", "relu6")
        c1 = d.get("c1", {})
        _check_keys(c1, {"depth", "stride", "filters"}, "c1")
        c2 = d.get("c2", {})
        _check_keys(c2, {"depth"}, "c2")
        c3 = d.get("c3", {})
        _check_keys(c3, {"filters", "depth"}, "c3")
        res = d.get("residual", {})
        _check_keys(res, _RESIDUAL_KEYS, "residual")
        count = int(res.get("count", 5))
        overrides = d.get("blocks", [{}] * count)
        if not isinstance(overrides, list) or len(overrides) != count:
            raise ConfigError(f"blocks: expected a list of {count} objects")
        blocks = []
        for n, o in enumerate(overrides, 1):
            _check_keys(o, _RESIDUAL_KEYS - {"count"}, f"blocks[{n - 1}]")
            merged = {**res, **o}
            blocks.append(
                ResidualBlockSpec(
                    channels=channels,
                    repeats=int(merged.get("repeats", 5)),
                    depth=int(merged.get("depth", 21)),
                    k=int(merged.get("k", 3)),
                    order=merged.get("order", "pointwise-first"),
                    compression=_compression(merged.get("compression", [3, 2]), f"blocks[{n - 1}]"),
                    activation=merged.get("activation", activation),
                )
            )
        return ModelConfig(
            channels=channels,
            c1=ConvSpec(int(c1.get("filters", channels)), int(c1.get("depth", 9)), int(c1.get("stride", 3))),
            blocks=tuple(blocks),
            c2_depth=int(c2.get("depth", 11)),
            c3=ConvSpec(int(c3.get("filters", 64)), int(c3.get("depth", 7))),
            activation=activation,
            bn_eps=float(d.get("bn_eps", 1e-3)),
            chunk_len=int(d.get("chunk_len", 5004)),
            batch=int(d.get("batch", 4)),
        )
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid field value: {e}") from e


def to_dict(cfg: ModelConfig) -> dict:
    return {
        "schema": SCHEMA,
        "channels": cfg.channels,
        "chunk_len": cfg.chunk_len,
        "batch": cfg.batch,
        "activation": cfg.activation,
        "bn_eps": cfg.bn_eps,
        "c1": {"depth": cfg.c1.depth, "stride": cfg.c1.stride},
        "residual": {"count": len(cfg.blocks)},
        "blocks": [
            {
                "repeats": b.repeats,
                "depth": b.depth,
                "k": b.k,
                "order": b.order,
                "compression": [b.compression.x, b.compression.y] if b.compression else None,
                "activation": b.activation,
            }
            for b in cfg.blocks
        ],
        "c2": {"depth": cfg.c2_depth},
        "c3": {"filters": cfg.c3.filters, "depth": cfg.c3.depth},
    }


def loads_config(text: str) -> ModelConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"parse error at line {e.lineno}, column {e.colno}: {e.msg}") from e
    return from_dict(d)


def load_config(path) -> ModelConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from e
    try:
        return loads_config(text)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e


def save_config(cfg: ModelConfig, path) -> None:
    Path(path).write_text(json.dumps(to_dict(cfg), indent=2) + "\n")


def baseline_config(**kw) -> ModelConfig:
    """The plain small-residual architecture: separable units, no compression."""
    channels = kw.pop("channels", 128)
    depth = kw.pop("depth", 21)
    blocks = tuple(
        ResidualBlockSpec(channels, depth=depth, k=1, order="depthwise-first", compression=None,
                          activation=kw.get("activation", "relu6"))
        for _ in range(5)
    )
    return ModelConfig(channels=channels, blocks=blocks, **kw)

"""Closed-form parameter, MAC, memory-traffic and receptive-field accounting.

MACs count multiplications only (bias adds are free); parameters include
biases. Batch norms appear as their own rows with four stored vectors per
channel and zero MACs, since they fold into the preceding convolution.
Memory traffic assumes every tensor is read and written once per layer,
with no fusion, so it is an upper bound.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from .blocks import ConvLayer, Residual, Unit, model_plan
from .config import ModelConfig, SeparableSpec


@dataclass
class CostReport:
    name: str = ""
    params: int = 0
    macs: int = 0
    mem_read: int = 0
    mem_write: int = 0
    receptive_field: int = 1
    layers: list = field(default_factory=list)

    @classmethod
    def total(cls, name, parts, receptive_field=1):
        return cls(
            name,
            sum(p.params for p in parts),
            sum(p.macs for p in parts),
            sum(p.mem_read for p in parts),
            sum(p.mem_write for p in parts),
            receptive_field,
            list(parts),
        )

    def rows(self, depth=0):
        """Flattened (indent, report) pairs, this report first."""
        yield depth, self
        for sub in self.layers:
            yield from sub.rows(depth + 1)

    def to_dict(self) -> dict:
        return asdict(self)


def cost_full(T: int, c_in: int, c_out: int, depth: int) -> CostReport:
    return CostReport("full", c_out * depth * c_in + c_out, T * c_out * depth * c_in, receptive_field=depth)


def cost_separable(T: int, c_in: int, c_out: int, depth: int) -> CostReport:
    """Depthwise of depth D on C_in channels, then pointwise C_in -> C_out."""
    return CostReport(
        "separable",
        depth * c_in + c_in * c_out + c_in + c_out,
        T * (depth * c_in + c_out * c_in),
        receptive_field=depth,
    )


def cost_ksep(T: int, c_in: int, c_out: int, depth: int, k: int) -> CostReport:
    """Fat-pointwise of window k, then depthwise of depth D/k on C_out channels.

    With k=1 the counts coincide with :func:`cost_separable` whenever
    C_in == C_out (the depthwise runs on the output side here).
    """
    if k < 1 or depth % k:
        raise ValueError(f"k={k} does not divide depth {depth}")
    m = depth // k
    return CostReport(
        f"{k}-blueprint",
        k * c_in * c_out + c_out + m * c_out + c_out,
        T * (k * c_in * c_out + m * c_out),
        receptive_field=depth,
    )


def layer_weight_count(layer: ConvLayer) -> int:
    return math.prod(layer.weight_shape)


def layer_macs(layer: ConvLayer, T_in: int) -> int:
    T_out = layer.out_len(T_in)
    if layer.kind == "depthwise":
        return T_out * layer.depth * layer.c_in
    if layer.kind == "transposed":
        return T_in * layer.depth * layer.c_out * layer.c_in
    return T_out * layer_weight_count(layer)


def layer_span(layer: ConvLayer) -> int:
    if layer.kind == "depthwise":
        return layer.dilation * (layer.depth - 1) + 1
    if layer.kind in ("full", "fat_pointwise", "strided"):
        return layer.depth
    return 1


def memory_traffic(layer: ConvLayer, T: int, bytes_per_value: int = 4) -> tuple[int, int]:
    """(bytes read, bytes written) for one pass over a length-T input."""
    read = (T * layer.c_in + layer_weight_count(layer)) * bytes_per_value
    write = layer.out_len(T) * layer.c_out * bytes_per_value
    return read, write


def layer_cost(layer: ConvLayer, T: int, bytes_per_value: int = 4) -> CostReport:
    read, write = memory_traffic(layer, T, bytes_per_value)
    return CostReport(
        layer.name,
        layer_weight_count(layer) + layer.c_out,
        layer_macs(layer, T),
        read,
        write,
        layer_span(layer),
    )


class _Field:
    """Receptive-field accumulator in input samples: span and input step per output step."""

    def __init__(self):
        self.rf, self.jump = 1, 1

    def push(self, layer: ConvLayer):
        if layer.kind == "transposed":
            self.jump //= layer.stride
            return
        self.rf += (layer_span(layer) - 1) * self.jump
        self.jump *= layer.stride

    def push_all(self, node):
        if isinstance(node, ConvLayer):
            self.push(node)
        elif isinstance(node, Unit):
            for layer in node.layers:
                self.push(layer)
        elif isinstance(node, Residual):
            main, skip = _Field(), _Field()
            main.rf, main.jump = self.rf, self.jump
            skip.rf, skip.jump = self.rf, self.jump
            for u in node.main:
                main.push_all(u)
            skip.push_all(node.skip)
            self.rf = max(main.rf, skip.rf)
        else:
            for n in node:
                self.push_all(n)


def separable_layers_for(spec: SeparableSpec) -> tuple:
    from .blocks import separable_layers

    return separable_layers("conv", spec)


def receptive_field(spec) -> int:
    """Receptive field in input samples.

    Accepts a :class:`ConvLayer`, a :class:`SeparableSpec`, a plan
    :class:`Unit` / :class:`Residual`, a :class:`ModelConfig`, or any
    sequence of those composed in order.
    """
    f = _Field()
    if isinstance(spec, SeparableSpec):
        spec = separable_layers_for(spec)
    elif isinstance(spec, ModelConfig):
        spec = model_plan(spec)
    f.push_all(spec)
    return f.rf


def model_cost(cfg: ModelConfig, T: int | None = None, bytes_per_value: int = 4) -> CostReport:
    """Per-block cost breakdown of the whole network on a length-T input."""
    T = cfg.chunk_len if T is None else T
    blocks = []

    def unit_rows(unit: Unit, T_in):
        rows, T_cur = [], T_in
        for layer in unit.layers:
            rows.append(layer_cost(layer, T_cur, bytes_per_value))
            T_cur = layer.out_len(T_cur)
        if unit.bn:
            C = unit.c_out
            rows.append(CostReport(f"{unit.name}.bn", 4 * C, 0, (T_cur * C + 4 * C) * bytes_per_value,
                                   T_cur * C * bytes_per_value))
        return rows, T_cur

    T_cur = T
    for node in model_plan(cfg):
        if isinstance(node, Residual):
            rows, T_main = [], T_cur
            for u in node.main:
                r, T_main = unit_rows(u, T_main)
                rows += r
            r, _ = unit_rows(node.skip, T_cur)
            rows += r
            blocks.append(CostReport.total(node.name, rows, receptive_field(node)))
        else:
            rows, T_cur = unit_rows(node, T_cur)
            blocks.append(CostReport.total(node.name, rows, receptive_field(node)))
    return CostReport.total("model", blocks, receptive_field(cfg))


def format_table(report: CostReport, max_depth: int = 2) -> str:
    header = ("layer", "params", "MACs", "read B", "write B", "RF")
    rows = [
        ("  " * d + r.name, f"{r.params:,}", f"{r.macs:,}", f"{r.mem_read:,}", f"{r.mem_write:,}", str(r.receptive_field))
        for d, r in report.rows()
        if d <= max_depth
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([fmt(header), "  ".join("-" * w for w in widths), *map(fmt, rows)])


def to_json(report: CostReport) -> str:
    return json.dumps(report.to_dict(), indent=2)

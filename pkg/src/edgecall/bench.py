"""Wall-clock benchmarks on the host CPU.

Two tables: single layer variants on the (B, T, C) shapes of the default
network, after C1 (4, 1668, 128) and inside a 3:2 compressed block
(4, 556, 256), and whole models swept over the residual kernel depth.
Each row reports the median of ``repeats`` runs and the analytic MAC
count. Absolute times say nothing about an accelerator; only the ratios
between rows carry over.
"""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .blocks import APPLY, ConvLayer, run_model
from .config import ModelConfig, SeparableSpec
from .cost import layer_macs, model_cost
from .initializers import fans, glorot_uniform, init_model
from .tensor import DTYPE

DEFAULT_SHAPES = ((4, 1668, 128), (4, 556, 256))
DEFAULT_DEPTHS = (9, 15, 21, 27, 33)
LAYER_DEPTH = 21


@dataclass(frozen=True)
class BenchRow:
    table: str
    name: str
    shape: tuple
    seconds: float
    macs: int
    samples_per_s: float | None = None


def variants(C: int, depth: int = LAYER_DEPTH) -> dict:
    """Layer stacks for each variant at overall depth ``depth``.

    2-blueprint runs at depth+1 when 2 does not divide ``depth``.
    """
    def sep(prefix, spec):
        from .blocks import separable_layers
        return separable_layers(prefix, spec)

    d2 = depth if depth % 2 == 0 else depth + 1
    out = {
        "pointwise": (ConvLayer("pw", "pointwise", C, C),),
        "separable": sep("sep", SeparableSpec(depth, C, C, "depthwise-first")),
        "blueprint": sep("bp", SeparableSpec(depth, C, C, "pointwise-first", 1)),
        f"2-blueprint (D={d2})": sep("k2", SeparableSpec(d2, C, C, "pointwise-first", 2)),
    }
    if depth % 3 == 0:
        out["3-blueprint"] = sep("k3", SeparableSpec(depth, C, C, "pointwise-first", 3))
    out["full"] = (ConvLayer("full", "full", C, C, depth),)
    return out


def _median_time(fn, repeats: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_layers(shapes=DEFAULT_SHAPES, repeats: int = 3, depth: int = LAYER_DEPTH, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    rows = []
    for B, T, C in shapes:
        x = rng.standard_normal((B, T, C)).astype(DTYPE)
        for name, layers in variants(C, depth).items():
            weights = {}
            for layer in layers:
                weights[f"{layer.name}.weight"] = glorot_uniform(layer.weight_shape, *fans(layer), seed=rng)
                weights[f"{layer.name}.bias"] = np.zeros(layer.bias_shape, DTYPE)
            params = [(APPLY[layer.kind], layer.params(weights)) for layer in layers]

            def run():
                y = x
                for op, p in params:
                    y = op(y, p)
                return y

            macs = B * sum(layer_macs(layer, T) for layer in layers)
            rows.append(BenchRow("layers", name, (B, T, C), _median_time(run, repeats), macs))
    return rows


def bench_models(cfg: ModelConfig | None = None, depths=DEFAULT_DEPTHS, repeats: int = 3, seed: int = 0) -> list:
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(seed)
    B, T = cfg.batch, cfg.chunk_len
    x = rng.standard_normal((B, T, cfg.in_channels)).astype(DTYPE)
    rows = []
    for d in depths:
        c = cfg.with_depth(d)
        w = init_model(c)
        secs = _median_time(lambda: run_model(c, w, x), repeats)
        rows.append(BenchRow("models", f"depth {d}", (B, T, cfg.in_channels), secs,
                             B * model_cost(c, T).macs, B * T / secs))
    return rows


def format_rows(rows) -> str:
    header = ("table", "variant", "shape", "median ms", "MACs", "GMAC/s", "samples/s")
    body = []
    for r in rows:
        body.append((
            r.table, r.name, "x".join(map(str, r.shape)), f"{1e3 * r.seconds:.2f}", f"{r.macs:,}",
            f"{r.macs / r.seconds / 1e9:.2f}", f"{r.samples_per_s:,.0f}" if r.samples_per_s else "-",
        ))
    widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(header)] if body else [len(h) for h in header]
    line = lambda cells: "  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    return "\n".join([line(header), "  ".join("-" * w for w in widths), *map(line, body)])


def run_bench(cfg: ModelConfig | None = None, repeats: int = 3, shapes=DEFAULT_SHAPES, depths=DEFAULT_DEPTHS) -> list:
    return bench_layers(shapes, repeats) + bench_models(cfg, depths, repeats)

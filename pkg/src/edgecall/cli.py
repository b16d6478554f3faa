"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or
malformed files, config/weights mismatch). Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys

from .blocks import MissingWeightError, check_weights
from .config import ConfigError, ModelConfig, from_dict, load_config, save_config
from .tensor import ShapeError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
log = logging.getLogger("edgecall")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(path) -> ModelConfig:
    return ModelConfig() if path is None else load_config(path)


def _model_from_file(args):
    """(cfg, float weights or None, QuantizedModel or None) from --config/--weights."""
    from .formats import as_quantized, load_weights

    wf = load_weights(args.weights)
    if args.config is not None:
        cfg = load_config(args.config)
    elif "config" in wf.meta:
        cfg = from_dict(wf.meta["config"])
    else:
        cfg = ModelConfig()
    if wf.meta.get("kind") == "quantized":
        return cfg, None, as_quantized(wf, cfg)
    check_weights(cfg, wf.tensors)
    return cfg, wf.tensors, None


def _calibration_inputs(path, plan, limit):
    from .formats import read_signals
    from .pipeline import chunk_signal, normalize_signal

    out = []
    for rec in read_signals(path):
        if len(rec.samples) < 9:
            continue
        out += [c.samples[:, None] for c in chunk_signal(normalize_signal(rec.samples), plan)]
        if len(out) >= limit:
            break
    if not out:
        raise ConfigError(f"{path}: no read long enough for calibration")
    return out[:limit]


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="\n") as fh:
            yield fh


def cmd_basecall(args) -> int:
    from .formats import read_signals
    from .pipeline import BasecallOptions, ChunkPlan, basecall, write_calls
    from .quant import quantize_model

    cfg, weights, qm = _model_from_file(args)
    plan = ChunkPlan.for_config(cfg, overlap=args.overlap, trim_frames=args.trim_frames)
    if args.quantized and qm is None:
        if args.calibration is None:
            raise UsageError("--quantized with float weights needs --calibration")
        qm = quantize_model(cfg, weights, _calibration_inputs(args.calibration, plan, args.calibration_chunks))
    if qm is not None:
        weights = None
    records = read_signals(args.input)
    opts = BasecallOptions(beam=args.beam, threads=args.threads, batch=args.batch, fastq=args.fastq, plan=plan)
    calls = basecall(cfg, records, weights=weights, quantized=qm, opts=opts)
    with _output(args.output) as fh:
        write_calls(calls, fh, args.fastq)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import DEFAULT_DEPTHS, DEFAULT_SHAPES, format_rows, run_bench

    cfg = _config(args.config)
    depths = tuple(args.depths) if args.depths else DEFAULT_DEPTHS
    rows = run_bench(cfg, args.repeats, DEFAULT_SHAPES, depths)
    print(format_rows(rows))
    e2e = [r for r in rows if r.name == f"depth {cfg.blocks[0].depth}"] or rows[-1:]
    if e2e and e2e[0].samples_per_s:
        print(f"\nend-to-end throughput: {e2e[0].samples_per_s:,.0f} signal samples/s ({e2e[0].name})")
    return EXIT_OK


def cmd_cost(args) -> int:
    from .cost import format_table, model_cost, to_json

    cfg = _config(args.config)
    report = model_cost(cfg, args.length)
    print(to_json(report) if args.json else format_table(report, args.max_depth))
    return EXIT_OK


def cmd_init_model(args) -> int:
    from .formats import save_float_model
    from .initializers import InitSpec, init_model

    cfg = _config(args.config)
    spec = InitSpec(args.scheme, args.epsilon, args.seed)
    save_float_model(args.out, cfg, init_model(cfg, spec))
    return EXIT_OK


def cmd_quantize(args) -> int:
    from .formats import save_quantized
    from .pipeline import ChunkPlan
    from .quant import footprint, quantize_model

    cfg, weights, qm = _model_from_file(args)
    if qm is not None:
        raise ConfigError(f"{args.weights} is already quantized")
    plan = ChunkPlan.for_config(cfg, overlap=0, trim_frames=0)  # calibration needs no overlap
    qm = quantize_model(cfg, weights, _calibration_inputs(args.calibration, plan, args.calibration_chunks))
    save_quantized(args.out, qm)
    fp = footprint(qm)
    print(f"weights {fp.weight_bytes:,} B, biases {fp.bias_bytes:,} B, peak activations "
          f"{fp.activation_bytes:,} B, total {fp.total:,} B of {fp.budget:,} B", file=sys.stderr)
    if fp.over_budget:
        log.warning("quantized model exceeds the on-chip memory budget")
    return EXIT_OK


def cmd_default_config(args) -> int:
    cfg = ModelConfig()
    if args.out in (None, "-"):
        from .config import to_dict
        print(json.dumps(to_dict(cfg), indent=2))
    else:
        save_config(cfg, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edgecall", description="Nanopore base calling with factorised convolutions.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("basecall", help="call reads from a signal file")
    b.add_argument("--config")
    b.add_argument("--weights", required=True)
    b.add_argument("--input", required=True, help="SIG1 or text signal file")
    b.add_argument("--output", default="-")
    b.add_argument("--quantized", action="store_true")
    b.add_argument("--calibration", help="signal file for int8 calibration")
    b.add_argument("--calibration-chunks", type=int, default=8)
    b.add_argument("--beam", type=int, default=0, metavar="W", help="beam width; 0 = greedy")
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--batch", type=int, default=1)
    b.add_argument("--overlap", type=int, default=504)
    b.add_argument("--trim-frames", type=int, default=84)
    b.add_argument("--fastq", action="store_true")
    b.set_defaults(func=cmd_basecall)

    s = sub.add_parser("bench", help="time layer variants and a depth sweep")
    s.add_argument("--config")
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--depths", type=int, nargs="+")
    s.set_defaults(func=cmd_bench)

    c = sub.add_parser("cost", help="parameter / MAC / memory table")
    c.add_argument("--config")
    c.add_argument("--length", type=int, default=None, help="input length (default chunk_len)")
    c.add_argument("--max-depth", type=int, default=2)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_cost)

    i = sub.add_parser("init-model", help="write an initialised weight file")
    i.add_argument("--config")
    i.add_argument("--scheme", choices=("glorot", "identity", "zeros"), default="glorot")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--epsilon", type=float, default=0.02)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_init_model)

    q = sub.add_parser("quantize", help="fold batch norms and quantize to int8")
    q.add_argument("--config")
    q.add_argument("--weights", required=True)
    q.add_argument("--calibration", required=True)
    q.add_argument("--calibration-chunks", type=int, default=8)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_quantize)

    d = sub.add_parser("default-config", help="print or write the default config file")
    d.add_argument("--out")
    d.set_defaults(func=cmd_default_config)
    return p


def _check_counts(args):
    for name in ("threads", "batch", "repeats", "calibration_chunks"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1, got {v}")
    if getattr(args, "beam", 0) < 0:
        raise UsageError(f"--beam must be >= 0, got {args.beam}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="edgecall: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        _check_counts(args)
        return args.func(args)
    except UsageError as e:
        print(f"edgecall: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MissingWeightError as e:
        print(f"edgecall: error: config/weights mismatch: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ShapeError, ValueError, OSError) as e:
        print(f"edgecall: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

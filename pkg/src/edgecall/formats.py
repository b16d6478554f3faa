"""On-disk formats: the ``DNCW`` weights container, ``SIG1`` / text signal
files, and FASTA/FASTQ output.

DNCW, version 1, all integers little-endian::

    magic      4s   b"DNCW"
    version    u16  1
    flags      u16  0
    n_tensors  u32
    n_qparams  u32
    meta_len   u32
    meta       meta_len bytes of UTF-8 JSON (may be empty)
    n_tensors x (name_len u16, name utf-8, dtype u8 [0=f32 1=i8 2=i32],
                 ndim u8, dims u32 * ndim, offset u64, nbytes u64)
    n_qparams x (name_len u16, name utf-8, scale f64, zero_point i32)
    payload    tensor bytes; offsets are relative to the payload start

SIG1, version 1::

    magic      4s   b"SIG1"
    version    u16  1
    n_reads    u32
    n_reads x (name_len u16, name utf-8, n_samples u64, offset u64)
    payload    float32 samples; offsets relative to the payload start

The text signal format is one number per line, with ``# read_id`` lines
starting each read.
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .quant import QuantParams

WEIGHTS_MAGIC = b"DNCW"
SIGNAL_MAGIC = b"SIG1"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("i1"), 2: np.dtype("<i4")}
DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("int8"): 1, np.dtype("int32"): 2}


class FormatError(ValueError):
    """A file is malformed, truncated, or of an unsupported version."""


@dataclass
class WeightsFile:
    tensors: dict = field(default_factory=dict)
    qparams: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _name(s: str) -> bytes:
    b = s.encode("utf-8")
    if len(b) > 0xFFFF:
        raise FormatError(f"name too long: {s[:40]}...")
    return struct.pack("<H", len(b)) + b


def dumps_weights(tensors: dict, qparams: dict | None = None, meta: dict | None = None) -> bytes:
    qparams = qparams or {}
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8") if meta else b""
    head = io.BytesIO()
    head.write(WEIGHTS_MAGIC)
    head.write(struct.pack("<HHIII", VERSION, 0, len(tensors), len(qparams), len(meta_b)))
    head.write(meta_b)
    payload = io.BytesIO()
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = DTYPE_CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        data = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
        head.write(_name(name))
        head.write(struct.pack("<BB", code, arr.ndim))
        head.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        head.write(struct.pack("<QQ", payload.tell(), len(data)))
        payload.write(data)
    for name, q in qparams.items():
        head.write(_name(name))
        head.write(struct.pack("<di", float(q.scale), int(q.zero_point)))
    return head.getvalue() + payload.getvalue()


def save_weights(path, tensors: dict, qparams: dict | None = None, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps_weights(tensors, qparams, meta))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise FormatError(f"truncated file while reading {what}")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals

    def name(self, what: str) -> str:
        (n,) = self.take("<H", what)
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}")
        s = self.buf[self.pos:self.pos + n]
        self.pos += n
        try:
            return s.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"corrupt name in {what}") from e


def loads_weights(buf: bytes) -> WeightsFile:
    r = _Reader(buf)
    (magic,) = r.take("<4s", "header")
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"not a weights file (magic {magic!r}, expected {WEIGHTS_MAGIC!r})")
    version, _flags, n_t, n_q, meta_len = r.take("<HHIII", "header")
    if version != VERSION:
        raise FormatError(f"unsupported weights format version {version} (expected {VERSION})")
    if r.pos + meta_len > len(buf):
        raise FormatError("truncated file while reading metadata")
    meta = json.loads(buf[r.pos:r.pos + meta_len].decode("utf-8")) if meta_len else {}
    r.pos += meta_len

    entries = []
    for i in range(n_t):
        name = r.name(f"directory entry {i}")
        code, ndim = r.take("<BB", f"directory entry {name!r}")
        if code not in DTYPES:
            raise FormatError(f"tensor {name!r}: unknown dtype code {code}")
        dims = r.take(f"<{ndim}I", f"directory entry {name!r}")
        offset, nbytes = r.take("<QQ", f"directory entry {name!r}")
        if nbytes != math.prod(dims) * DTYPES[code].itemsize:
            raise FormatError(f"tensor {name!r}: byte count {nbytes} does not match dims {dims}")
        entries.append((name, code, dims, offset, nbytes))
    qparams = {}
    for i in range(n_q):
        name = r.name(f"quant record {i}")
        scale, zp = r.take("<di", f"quant record {name!r}")
        if name in qparams:
            raise FormatError(f"duplicate quant record {name!r}")
        try:
            qparams[name] = QuantParams(scale, zp)
        except ValueError as e:
            raise FormatError(f"quant record {name!r}: {e}") from e

    base = r.pos
    tensors = {}
    spans = []
    for name, code, dims, offset, nbytes in entries:
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        start = base + offset
        if start + nbytes > len(buf):
            raise FormatError(f"truncated payload: tensor {name!r} is unreadable")
        spans.append((offset, offset + nbytes, name))
        tensors[name] = np.frombuffer(buf, DTYPES[code], math.prod(dims), start).reshape(dims).copy()
    spans.sort()
    for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
        if b0 < a1 and b1 > b0:
            raise FormatError(f"corrupt directory: tensors {an!r} and {bn!r} overlap")
    return WeightsFile(tensors, qparams, meta)


def load_weights(path) -> WeightsFile:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read weights {path}: {e.strerror}") from e
    try:
        return loads_weights(buf)
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e


# -- signals --------------------------------------------------------------------


@dataclass(frozen=True)
class SignalRecord:
    read_id: str
    samples: np.ndarray

    def __post_init__(self):
        if len(self.samples) == 0:
            raise FormatError(f"read {self.read_id!r} has no samples")


def dumps_signals(records) -> bytes:
    records = list(records)
    head = io.BytesIO()
    head.write(SIGNAL_MAGIC)
    head.write(struct.pack("<HI", VERSION, len(records)))
    payload = io.BytesIO()
    for rec in records:
        data = np.asarray(rec.samples, dtype="<f4").tobytes()
        head.write(_name(rec.read_id))
        head.write(struct.pack("<QQ", len(rec.samples), payload.tell()))
        payload.write(data)
    return head.getvalue() + payload.getvalue()


def loads_signals_binary(buf: bytes) -> list:
    r = _Reader(buf)
    (magic,) = r.take("<4s", "header")
    if magic != SIGNAL_MAGIC:
        raise FormatError(f"not a signal file (magic {magic!r})")
    version, n = r.take("<HI", "header")
    if version != VERSION:
        raise FormatError(f"unsupported signal format version {version}")
    entries = []
    for i in range(n):
        name = r.name(f"read entry {i}")
        count, offset = r.take("<QQ", f"read entry {name!r}")
        entries.append((name, count, offset))
    base = r.pos
    out = []
    for name, count, offset in entries:
        start = base + offset
        if start + 4 * count > len(buf):
            raise FormatError(f"truncated payload: read {name!r} is unreadable")
        out.append(SignalRecord(name, np.frombuffer(buf, "<f4", count, start).astype(np.float32)))
    return out


def loads_signals_text(text: str) -> list:
    out, rid, vals = [], None, []

    def flush():
        if rid is not None or vals:
            out.append(SignalRecord(rid if rid is not None else f"read{len(out)}", np.array(vals, np.float32)))

    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            flush()
            rid, vals = line[1:].strip() or f"read{len(out)}", []
            continue
        try:
            vals.append(float(line))
        except ValueError:
            raise FormatError(f"line {lineno}: not a number: {line[:40]!r}") from None
    flush()
    return out


def read_signals(path) -> list:
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read signal file {path}: {e.strerror}") from e
    try:
        if buf[:4] == SIGNAL_MAGIC:
            return loads_signals_binary(buf)
        return loads_signals_text(buf.decode("utf-8"))
    except UnicodeDecodeError:
        raise FormatError(f"{path}: neither a SIG1 file nor UTF-8 text") from None
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e


def write_signals(path, records, text: bool = False) -> None:
    if text:
        lines = []
        for rec in records:
            lines.append(f"# {rec.read_id}")
            lines += [repr(float(v)) for v in rec.samples]
        Path(path).write_text("\n".join(lines) + "\n")
    else:
        Path(path).write_bytes(dumps_signals(records))


def format_record(read_id: str, sequence: str, quality: str | None = None) -> str:
    if quality is None:
        return f">{read_id}\n{sequence}\n"
    return f"@{read_id}\n{sequence}\n+\n{quality}\n"


# -- model helpers ----------------------------------------------------------------


def save_float_model(path, cfg, weights: dict) -> None:
    from .config import to_dict

    save_weights(path, {n: np.asarray(a, np.float32) for n, a in weights.items()},
                 meta={"kind": "float", "config": to_dict(cfg)})


def save_quantized(path, qm) -> None:
    from .config import to_dict

    meta = {"kind": "quantized", "bn_folded": qm.bn_folded, "relu6_fused": qm.relu6_fused}
    if qm.cfg is not None:
        meta["config"] = to_dict(qm.cfg)
    save_weights(path, qm.tensors, qm.qparams, meta)


def as_quantized(wf: WeightsFile, cfg):
    """Rebuild a QuantizedModel from a loaded container, checking it against ``cfg``."""
    from .blocks import iter_units, model_plan
    from .quant import QuantizedModel

    if wf.meta.get("kind") != "quantized":
        raise FormatError("weights file does not hold a quantized model")
    for unit in iter_units(model_plan(cfg)):
        for layer in unit.layers:
            for suffix, shape, dtype in ((".weight", layer.weight_shape, np.int8), (".bias", layer.bias_shape, np.int32)):
                name = layer.name + suffix
                if name not in wf.tensors or name not in wf.qparams:
                    raise FormatError(f"quantized model is missing tensor {name!r}")
                t = wf.tensors[name]
                if t.shape != tuple(shape) or t.dtype != dtype:
                    raise FormatError(f"tensor {name!r} is {t.dtype}{t.shape}, architecture expects "
                                      f"{np.dtype(dtype)}{tuple(shape)}")
    return QuantizedModel(cfg, dict(wf.tensors), dict(wf.qparams),
                          wf.meta.get("bn_folded", True), wf.meta.get("relu6_fused", True))

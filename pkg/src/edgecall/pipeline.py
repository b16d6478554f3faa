"""Signal normalisation, chunking, stitching and the read-level base-call driver."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .blocks import check_input_length, check_weights, run_model
from .config import ConfigError, ModelConfig
from .ctc import CallResult, beam_decode, greedy_decode, phred
from .formats import SignalRecord, format_record
from .quant import QuantizedModel, quantized_run_model
from .tensor import DTYPE

log = logging.getLogger("edgecall")

MAD_SCALE = 1.4826
MAD_EPS = 1e-8
FRAME_STRIDE = 3
MIN_SAMPLES = 9


def normalize_signal(samples) -> np.ndarray:
    """(v - median) / (1.4826 * MAD + 1e-8); a constant read maps to zeros."""
    v = np.asarray(samples, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot normalise an empty read")
    med = np.median(v)
    mad = np.median(np.abs(v - med))
    return ((v - med) / (MAD_SCALE * mad + MAD_EPS)).astype(DTYPE)


@dataclass(frozen=True)
class ChunkPlan:
    """How a read is cut into fixed-length, overlapping model inputs.

    ``overlap`` must be a multiple of 9 so that every chunk start stays on
    the stride-3 frame grid and on the grid of a 3:2 compressed block.
    """

    chunk_len: int = 5004
    overlap: int = 504
    trim_frames: int = 84

    def __post_init__(self):
        if self.chunk_len < 9 or self.chunk_len % 9:
            raise ConfigError(f"chunk_len={self.chunk_len} must be a positive multiple of 9")
        if self.overlap < 0 or self.overlap % 9:
            raise ConfigError(f"overlap={self.overlap} must be a non-negative multiple of 9")
        if self.overlap >= self.chunk_len:
            raise ConfigError(f"overlap={self.overlap} must be smaller than chunk_len={self.chunk_len}")
        if self.trim_frames < 0 or FRAME_STRIDE * self.trim_frames > self.overlap:
            raise ConfigError(f"trim_frames={self.trim_frames} needs 3*trim_frames <= overlap={self.overlap}")

    @property
    def step(self) -> int:
        return self.chunk_len - self.overlap

    @classmethod
    def for_config(cls, cfg: ModelConfig, **kw) -> "ChunkPlan":
        plan = cls(chunk_len=kw.pop("chunk_len", cfg.chunk_len), **kw)
        plan.check(cfg)
        return plan

    def check(self, cfg: ModelConfig) -> None:
        for what, n in (("chunk_len", self.chunk_len), ("chunk step", self.step)):
            try:
                check_input_length(cfg, n)
            except ValueError as e:
                raise ConfigError(f"{what}={n} is incompatible with the model: {e}") from None


@dataclass(frozen=True)
class Chunk:
    start: int
    samples: np.ndarray  # always plan.chunk_len long
    valid: int  # number of real (unpadded) samples


def n_chunks(length: int, plan: ChunkPlan) -> int:
    if length <= plan.chunk_len:
        return 1
    return 1 + math.ceil((length - plan.chunk_len) / plan.step)


def chunk_signal(samples, plan: ChunkPlan) -> list:
    """Chunks starting at multiples of ``plan.step``; the last is zero-padded to ``chunk_len``."""
    v = np.asarray(samples, dtype=DTYPE).ravel()
    out = []
    for i in range(n_chunks(len(v), plan)):
        s = i * plan.step
        piece = v[s:s + plan.chunk_len]
        padded = np.zeros(plan.chunk_len, DTYPE)
        padded[:len(piece)] = piece
        out.append(Chunk(s, padded, len(piece)))
    return out


def stitch_calls(probs, starts, length: int, plan: ChunkPlan) -> np.ndarray:
    """Join per-chunk frame probabilities into ``ceil(length / 3)`` frames.

    Chunk i contributes global frames from ``start_i / 3 + trim_frames``
    (0 for the first chunk) up to where chunk i+1 takes over, so each
    boundary frame comes from the chunk whose centre is nearer.
    """
    starts = [int(s) for s in starts]
    expected = [i * plan.step for i in range(n_chunks(length, plan))]
    if starts != expected:
        raise ValueError(f"chunk starts {starts[:4]}... do not match the plan (expected {expected[:4]}...)")
    if len(probs) != len(starts):
        raise ValueError(f"{len(probs)} probability blocks for {len(starts)} chunks")
    frames_per_chunk = plan.chunk_len // FRAME_STRIDE
    total = math.ceil(length / FRAME_STRIDE)
    lo = [0] + [s // FRAME_STRIDE + plan.trim_frames for s in starts[1:]]
    hi = lo[1:] + [total]
    parts = []
    for p, s, a, b in zip(probs, starts, lo, hi):
        p = np.asarray(p)
        if p.shape[0] != frames_per_chunk:
            raise ValueError(f"chunk at {s} has {p.shape[0]} frames, expected {frames_per_chunk}")
        off = s // FRAME_STRIDE
        parts.append(p[a - off:b - off])
    return np.concatenate(parts) if parts else np.zeros((0, 5), DTYPE)


# -- running a model over reads --------------------------------------------------


class Runner:
    """Float or int8 model applied to a stack of chunks."""

    def __init__(self, cfg: ModelConfig, weights=None, quantized: QuantizedModel | None = None):
        if (weights is None) == (quantized is None):
            raise ValueError("give exactly one of weights or quantized")
        if weights is not None:
            check_weights(cfg, weights)
        self.cfg, self.weights, self.quantized = cfg, weights, quantized

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.quantized is not None:
            return quantized_run_model(self.quantized, x)
        return run_model(self.cfg, self.weights, x)


def frame_probs(runner, samples, plan: ChunkPlan, batch: int = 1) -> np.ndarray:
    """Normalised read -> stitched (ceil(L/3), 5) probabilities."""
    chunks = chunk_signal(samples, plan)
    probs = []
    for i in range(0, len(chunks), max(1, batch)):
        stack = np.stack([c.samples for c in chunks[i:i + batch]])[..., None]
        probs.extend(runner(stack))
    return stitch_calls(probs, [c.start for c in chunks], len(np.ravel(samples)), plan)


@dataclass
class BasecallOptions:
    beam: int = 0  # 0 selects greedy decoding
    threads: int = 1
    batch: int = 1
    fastq: bool = False
    plan: ChunkPlan | None = None


@dataclass
class ReadCall:
    read_id: str
    result: CallResult
    warnings: list = field(default_factory=list)

    def record(self, fastq: bool = False) -> str:
        qual = phred(self.result.qualities or [0.0] * len(self.result.sequence)) if fastq else None
        return format_record(self.read_id, self.result.sequence, qual)


def decode(p, beam: int = 0) -> CallResult:
    return beam_decode(p, beam) if beam else greedy_decode(p)


def call_read(runner, rec: SignalRecord, plan: ChunkPlan, opts: BasecallOptions) -> ReadCall:
    n = len(rec.samples)
    if n < MIN_SAMPLES:
        msg = f"read {rec.read_id!r} has {n} samples (< {MIN_SAMPLES}); emitting an empty sequence"
        return ReadCall(rec.read_id, CallResult("", []), [msg])
    p = frame_probs(runner, normalize_signal(rec.samples), plan, opts.batch)
    return ReadCall(rec.read_id, decode(p, opts.beam))


def basecall(cfg: ModelConfig, records, weights=None, quantized=None, opts: BasecallOptions | None = None) -> list:
    """Call every read; results come back in input order whatever the thread count."""
    opts = opts or BasecallOptions()
    plan = opts.plan or ChunkPlan.for_config(cfg)
    plan.check(cfg)
    runner = Runner(cfg, weights, quantized)
    records = list(records)
    work = lambda rec: call_read(runner, rec, plan, opts)
    if opts.threads > 1 and len(records) > 1:
        with ThreadPoolExecutor(opts.threads) as pool:
            calls = list(pool.map(work, records))
    else:
        calls = [work(r) for r in records]
    for c in calls:
        for w in c.warnings:
            log.warning(w)
    return calls


def write_calls(calls, fh, fastq: bool = False) -> None:
    for c in calls:
        fh.write(c.record(fastq))

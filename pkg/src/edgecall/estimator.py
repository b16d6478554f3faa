"""scikit-learn style wrappers around the pipeline.

``X`` is always a sequence of 1-D raw signals (one per read); ``y`` is
ignored. No training happens here: ``fit`` loads or initialises weights,
and for the int8 path calibrates activation ranges on chunks of ``X``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import ModelConfig, load_config
from .formats import SignalRecord, load_weights
from .initializers import InitSpec, fit_batchnorm_statistics, init_model
from .pipeline import BasecallOptions, ChunkPlan, Runner, basecall, chunk_signal, frame_probs, normalize_signal
from .quant import QuantizedModel, quantize_model


def _signals(X) -> list:
    if isinstance(X, np.ndarray) and X.ndim == 1:
        X = [X]
    out = [np.asarray(x, dtype=np.float64).ravel() for x in X]
    if any(x.size == 0 for x in out):
        raise ValueError("every signal must have at least one sample")
    return out


class SignalNormalizer(TransformerMixin, BaseEstimator):
    """Per-read median/MAD normalisation. Stateless; ``fit`` only validates."""

    def fit(self, X, y=None):
        self.n_reads_seen_ = len(_signals(X))
        return self

    def transform(self, X):
        return [normalize_signal(x) for x in _signals(X)]


class Basecaller(BaseEstimator):
    """Float or int8 base caller.

    Parameters
    ----------
    config : ModelConfig, path or None (default architecture)
    weights : path to a DNCW file, a weight dict, or None to initialise
    init_scheme, seed : initialisation when ``weights`` is None
    fit_bn : measure batch-norm statistics on ``X`` during ``fit``
    quantized : run int8 inference (calibrated on ``X``)
    calibration_chunks : maximum number of chunks used for calibration
    beam : 0 for greedy decoding, otherwise the beam width
    """

    def __init__(self, config=None, weights=None, init_scheme="glorot", seed=0, fit_bn=False,
                 quantized=False, calibration_chunks=8, beam=0, threads=1, batch=1,
                 overlap=504, trim_frames=84):
        self.config = config
        self.weights = weights
        self.init_scheme = init_scheme
        self.seed = seed
        self.fit_bn = fit_bn
        self.quantized = quantized
        self.calibration_chunks = calibration_chunks
        self.beam = beam
        self.threads = threads
        self.batch = batch
        self.overlap = overlap
        self.trim_frames = trim_frames

    def _cfg(self) -> ModelConfig:
        if self.config is None:
            return ModelConfig()
        if isinstance(self.config, ModelConfig):
            return self.config
        return load_config(self.config)

    def _calibration(self, X, plan):
        chunks = []
        for x in _signals(X):
            chunks += [c.samples[:, None] for c in chunk_signal(normalize_signal(x), plan)]
            if len(chunks) >= self.calibration_chunks:
                break
        if not chunks:
            raise ValueError("need at least one signal to calibrate")
        return chunks[: self.calibration_chunks]

    def fit(self, X=None, y=None):
        cfg = self._cfg()
        plan = ChunkPlan.for_config(cfg, overlap=self.overlap, trim_frames=self.trim_frames)
        if self.weights is None:
            weights = init_model(cfg, InitSpec(self.init_scheme, seed=self.seed))
        elif isinstance(self.weights, dict):
            weights = dict(self.weights)
        else:
            weights = load_weights(self.weights).tensors
        if self.fit_bn or self.quantized:
            if X is None:
                raise ValueError("fit_bn and quantized need signals X")
            calib = self._calibration(X, plan)
            if self.fit_bn:
                weights = fit_batchnorm_statistics(cfg, weights, calib)
        self.config_, self.plan_, self.weights_ = cfg, plan, weights
        self.quantized_model_: QuantizedModel | None = (
            quantize_model(cfg, weights, calib) if self.quantized else None
        )
        self.runner_ = Runner(cfg, None if self.quantized else weights, self.quantized_model_)
        return self

    def transform(self, X):
        """Stitched (ceil(L/3), 5) frame probabilities per read."""
        check_is_fitted(self, "runner_")
        return [frame_probs(self.runner_, normalize_signal(x), self.plan_, self.batch) for x in _signals(X)]

    def predict(self, X):
        """Called sequences, one string per read."""
        check_is_fitted(self, "runner_")
        records = [SignalRecord(f"read{i}", x) for i, x in enumerate(_signals(X))]
        opts = BasecallOptions(beam=self.beam, threads=self.threads, batch=self.batch, plan=self.plan_)
        calls = basecall(self.config_, records,
                         weights=None if self.quantized else self.weights_,
                         quantized=self.quantized_model_, opts=opts)
        return [c.result.sequence for c in calls]

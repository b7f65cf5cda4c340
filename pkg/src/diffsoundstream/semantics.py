"""Semantic tokens: 50 Hz SSL-style features, pooled to 12.5 Hz, k-means quantized."""

from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import Protocol

import numpy as np

from .audio import Waveform
from .dsp import log_mel_features
from .quant import Codebook, kmeans_fit, vq_encode_batch
from .tokens import SemanticTokenSeq

FEATURE_MAGIC = b"DSFT"
FEATURE_VERSION = 1
FEATURE_RATE_CENTI_HZ = 5000
FEATURE_HOP = 480
POOL_KERNEL = 8
POOL_STRIDE = 4


class FeatureProvider(Protocol):
    dim: int
    rate: float

    def features(self, wave: Waveform) -> np.ndarray: ...


def expected_feature_frames(wave: Waveform) -> int:
    return max(1, math.ceil(len(wave) / FEATURE_HOP))


class LogMelProvider:
    """Self-contained 64-band log-mel features: 40 ms window, 20 ms hop."""

    rate = 50.0

    def __init__(self, n_mels: int = 64):
        self.dim = n_mels

    def features(self, wave: Waveform) -> np.ndarray:
        return log_mel_features(wave.samples, wave.sample_rate, n_mels=self.dim, hop=FEATURE_HOP, win=2 * FEATURE_HOP)


class FileFeatureProvider:
    """Precomputed 50 Hz features stored as ``<name>.dsft`` files in one directory."""

    rate = 50.0

    def __init__(self, directory, dim: int | None = None):
        self.directory = Path(directory)
        if dim is None:
            first = next(iter(sorted(self.directory.glob("*.dsft"))), None)
            if first is None:
                raise FileNotFoundError(f"no .dsft feature files in {self.directory}")
            dim = read_features(first).shape[1]
        self.dim = dim

    def features(self, wave: Waveform) -> np.ndarray:
        if not wave.name:
            raise ValueError("FileFeatureProvider needs named waveforms to locate feature files")
        feats = read_features(self.directory / f"{wave.name}.dsft")
        if feats.shape[1] != self.dim:
            raise ValueError(f"{wave.name}: feature dim {feats.shape[1]} != provider dim {self.dim}")
        want = expected_feature_frames(wave)
        if abs(len(feats) - want) > 1:
            raise ValueError(f"{wave.name}: {len(feats)} feature frames for audio needing {want}")
        if len(feats) < want:
            feats = np.concatenate([feats, feats[-1:]], axis=0)
        return feats[:want]


def write_features(path, feats: np.ndarray) -> None:
    feats = np.asarray(feats, dtype="<f4")
    header = FEATURE_MAGIC + struct.pack("<BIII", FEATURE_VERSION, feats.shape[0], feats.shape[1], FEATURE_RATE_CENTI_HZ)
    Path(path).write_bytes(header + feats.tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature file (bad magic)")
    version, frames, dim, rate = struct.unpack_from("<BIII", raw, 4)
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported feature file version {version}")
    if rate != FEATURE_RATE_CENTI_HZ:
        raise ValueError(f"{path}: features must be 50 Hz, header says {rate / 100} Hz")
    payload = raw[17:]
    if len(payload) != 4 * frames * dim:
        raise ValueError(f"{path}: expected {4 * frames * dim} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(frames, dim).astype(np.float32)


def pooled_length(n: int) -> int:
    return math.ceil(n / POOL_STRIDE)


def pool_features(feats: np.ndarray) -> np.ndarray:
    """Non-causal mean pooling, window 8 / stride 4, replicate "same" padding."""
    x = np.asarray(feats, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError(f"expected a non-empty (frames, dim) array, got shape {x.shape}")
    n = len(x)
    out = pooled_length(n)
    total = max((out - 1) * POOL_STRIDE + POOL_KERNEL - n, 0)
    left = total // 2
    padded = np.concatenate([np.repeat(x[:1], left, 0), x, np.repeat(x[-1:], total - left, 0)])
    windows = np.lib.stride_tricks.sliding_window_view(padded, POOL_KERNEL, axis=0)[::POOL_STRIDE]
    return windows[:out].mean(axis=-1)


def fit_semantic_codebook(waves, provider: FeatureProvider, k: int, seed: int = 0) -> Codebook:
    """k-means over pooled features of a held-out set of clips."""
    pooled = np.concatenate([pool_features(provider.features(w)) for w in waves])
    return kmeans_fit(pooled, k, seed=seed)


def semantic_tokenize(wave: Waveform, provider: FeatureProvider, cb: Codebook) -> SemanticTokenSeq:
    if cb.dim != provider.dim:
        raise ValueError(f"codebook dim {cb.dim} != feature dim {provider.dim}")
    pooled = pool_features(provider.features(wave))
    return SemanticTokenSeq(vq_encode_batch(pooled, cb), vocab_size=cb.size)

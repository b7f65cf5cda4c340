"""Token containers shared by the tokenizers, the bitstream and the diffuser."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 24000
TOKEN_FRAME_RATE = 12.5
LATENT_FRAME_RATE = 50.0
SAMPLES_PER_TOKEN_FRAME = 1920
SAMPLES_PER_LATENT_FRAME = 480
TOKEN_BITS = 11
MAX_TOKEN_ID = 2**TOKEN_BITS


def token_frames(num_samples: int) -> int:
    return math.ceil(num_samples / SAMPLES_PER_TOKEN_FRAME)


def latent_frames(num_samples: int) -> int:
    return math.ceil(num_samples / SAMPLES_PER_LATENT_FRAME)


@dataclass(frozen=True)
class ConditioningSpec:
    n_s: int = 1
    n_a: int = 3

    def __post_init__(self):
        if self.n_s not in (0, 1):
            raise ValueError(f"n_s must be 0 or 1, got {self.n_s}")
        if not 1 <= self.n_a <= 8:
            raise ValueError(f"n_a must lie in [1, 8], got {self.n_a}")

    @property
    def depth(self) -> int:
        return self.n_s + self.n_a


@dataclass(frozen=True)
class SemanticTokenSeq:
    ids: np.ndarray
    vocab_size: int = 2048

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ValueError(f"semantic ids must be 1-D, got shape {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError(f"semantic ids must lie in [0, {self.vocab_size})")
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.ids)

    frame_rate = TOKEN_FRAME_RATE

    def __eq__(self, other):
        return isinstance(other, SemanticTokenSeq) and np.array_equal(self.ids, other.ids)


@dataclass(frozen=True)
class AcousticTokenSeq:
    """``(frames, depth)`` RVQ ids, levels ordered coarse to fine."""

    ids: np.ndarray
    vocab_size: int = 2048

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 2 or not 1 <= ids.shape[1] <= 8:
            raise ValueError(f"acoustic ids must be (frames, depth<=8), got shape {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError(f"acoustic ids must lie in [0, {self.vocab_size})")
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.ids.shape[0]

    @property
    def depth(self) -> int:
        return self.ids.shape[1]

    frame_rate = TOKEN_FRAME_RATE

    def truncate(self, depth: int) -> "AcousticTokenSeq":
        if not 1 <= depth <= self.depth:
            raise ValueError(f"cannot truncate depth {self.depth} to {depth}")
        return AcousticTokenSeq(self.ids[:, :depth], self.vocab_size)

    def __eq__(self, other):
        return isinstance(other, AcousticTokenSeq) and np.array_equal(self.ids, other.ids)

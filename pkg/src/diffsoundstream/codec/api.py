"""Waveform-level entry points around the two autoencoders (inference mode)."""

from __future__ import annotations

import numpy as np
import torch

from ..audio import Waveform
from ..quant import RvqStack, rvq_encode_batch
from ..tokens import SAMPLE_RATE, AcousticTokenSeq, SemanticTokenSeq
from .models import SsCl, SsSc


def _wave_tensor(wave: Waveform) -> torch.Tensor:
    if wave.sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz audio, got {wave.sample_rate} Hz")
    return torch.as_tensor(wave.samples, dtype=torch.float32)[None]


def _sem_tensor(sem: SemanticTokenSeq | None):
    return None if sem is None else torch.as_tensor(sem.ids)[None]


@torch.no_grad()
def ss_sc_encode(model: SsSc, wave: Waveform, sem: SemanticTokenSeq | None) -> np.ndarray:
    """Pre-quantization frames ``(ceil(N / 1920), D)``."""
    model.eval()
    return model.encode(_wave_tensor(wave), _sem_tensor(sem))[0].double().numpy()


def ss_sc_tokenize(model: SsSc, wave: Waveform, sem: SemanticTokenSeq | None, depth: int, stack: RvqStack | None = None) -> AcousticTokenSeq:
    stack = stack or model.rvq.to_stack()
    if not 1 <= depth <= stack.max_depth:
        raise ValueError(f"depth must lie in [1, {stack.max_depth}], got {depth}")
    frames = ss_sc_encode(model, wave, sem)
    return AcousticTokenSeq(rvq_encode_batch(frames, stack, depth), vocab_size=max(2048, stack.codebooks[0].size))


@torch.no_grad()
def ss_sc_decode(model: SsSc, ac: AcousticTokenSeq, sem: SemanticTokenSeq | None) -> Waveform:
    model.eval()
    if sem is not None and len(sem) != len(ac):
        raise ValueError(f"semantic ({len(sem)}) and acoustic ({len(ac)}) token grids are misaligned")
    ids = torch.as_tensor(ac.ids)[None]
    out = model.decode(ids, _sem_tensor(sem) if model.cfg.semantic else None)
    return Waveform(out[0].numpy(), SAMPLE_RATE)


@torch.no_grad()
def ss_cl_encode(model: SsCl, wave: Waveform, training: bool = False, gen: torch.Generator | None = None) -> np.ndarray:
    """Latents ``(ceil(N / 480), 24)`` in the clip range."""
    model.eval()
    return model.encode(_wave_tensor(wave), training=training, gen=gen)[0].numpy()


@torch.no_grad()
def ss_cl_decode(model: SsCl, lat) -> Waveform:
    model.eval()
    lat = torch.as_tensor(np.asarray(lat), dtype=torch.float32)
    if lat.dim() != 2:
        raise ValueError(f"expected latents shaped (frames, {model.cfg.latent_dim}), got {tuple(lat.shape)}")
    return Waveform(model.decode(lat[None])[0].numpy(), SAMPLE_RATE)

"""Objective spectral distances between a reference and a decoded waveform."""

from __future__ import annotations

import numpy as np
import torch

from ..audio import Waveform
from ..dsp import MEL_WINDOWS, mel_spectrogram, stft_mag


def _overlap(ref: Waveform, hyp: Waveform) -> tuple[torch.Tensor, torch.Tensor]:
    if ref.sample_rate != hyp.sample_rate:
        raise ValueError(f"sample rates differ: {ref.sample_rate} vs {hyp.sample_rate}")
    n = min(len(ref), len(hyp))
    if n == 0:
        raise ValueError("reference and hypothesis do not overlap (zero length)")
    r = torch.as_tensor(ref.samples[:n], dtype=torch.float64)[None]
    h = torch.as_tensor(hyp.samples[:n], dtype=torch.float64)[None]
    return r, h


def mel_distance(ref: Waveform, hyp: Waveform, windows=MEL_WINDOWS) -> float:
    """Mean absolute mel-magnitude difference, averaged over window sizes."""
    r, h = _overlap(ref, hyp)
    return float(np.mean([(mel_spectrogram(r, w) - mel_spectrogram(h, w)).abs().mean() for w in windows]))


def log_spectral_distortion(ref: Waveform, hyp: Waveform, n_fft: int = 1024, eps: float = 1e-10) -> float:
    """Frame-averaged RMS difference of the log power spectra, in dB."""
    r, h = _overlap(ref, hyp)
    p_ref = stft_mag(r, n_fft).pow(2) + eps
    p_hyp = stft_mag(h, n_fft).pow(2) + eps
    diff = 10 * (torch.log10(p_ref) - torch.log10(p_hyp))
    return float(diff.pow(2).mean(dim=1).sqrt().mean())


def spectral_metrics(ref: Waveform, hyp: Waveform) -> tuple[float, float]:
    """``(mel_distance, lsd)`` over the common prefix of both signals."""
    return mel_distance(ref, hyp), log_spectral_distortion(ref, hyp)

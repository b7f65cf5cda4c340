"""Spectral helpers shared by the toy feature provider, losses and metrics."""

from __future__ import annotations

import functools
import math

import numpy as np
import torch
import torch.nn.functional as F

MEL_WINDOWS = (64, 128, 256, 512, 1024, 2048)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=64)
def mel_filterbank(n_fft: int, n_mels: int, sample_rate: int = 24000, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-style filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    fmax = fmax or sample_rate / 2
    bins = np.linspace(0.0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bins[None] - lower) / np.maximum(center - lower, 1e-9)
    down = (upper - bins[None]) / np.maximum(upper - center, 1e-9)
    return np.maximum(0.0, np.minimum(up, down))


def _fb(n_fft, n_mels, sample_rate, dtype, device):
    return torch.as_tensor(mel_filterbank(n_fft, n_mels, sample_rate), dtype=dtype, device=device)


def stft_mag(x: torch.Tensor, win: int, hop: int | None = None, n_fft: int | None = None) -> torch.Tensor:
    """Magnitude STFT of ``(B, N)`` audio, centered frames; ``(B, bins, frames)``."""
    hop = hop or win // 4
    n_fft = n_fft or win
    window = torch.hann_window(win, dtype=x.dtype, device=x.device)
    pad = n_fft // 2
    mode = "reflect" if x.shape[-1] > pad else "constant"
    xp = F.pad(x[:, None], (pad, pad), mode=mode)[:, 0]
    spec = torch.stft(xp, n_fft, hop_length=hop, win_length=win, window=window, center=False, return_complex=True)
    return spec.abs()


def mel_spectrogram(x: torch.Tensor, win: int, n_mels: int | None = None, hop: int | None = None, sample_rate: int = 24000) -> torch.Tensor:
    n_mels = n_mels or min(64, win // 4)
    mag = stft_mag(x, win, hop)
    return torch.einsum("mf,bft->bmt", _fb(win, n_mels, sample_rate, x.dtype, x.device), mag)


def multiscale_mel_distance(ref: torch.Tensor, hyp: torch.Tensor, windows=MEL_WINDOWS, eps: float = 1e-5):
    """Mean over scales of ``L1(mel) + L2(log mel)`` between two ``(B, N)`` signals.

    Returns ``(l1_term, l2_term)`` as scalars so callers can weight them.
    """
    l1 = ref.new_zeros(())
    l2 = ref.new_zeros(())
    for w in windows:
        m_ref = mel_spectrogram(ref, w)
        m_hyp = mel_spectrogram(hyp, w)
        l1 = l1 + (m_ref - m_hyp).abs().mean()
        diff = torch.log(m_ref + eps) - torch.log(m_hyp + eps)
        # alpha_s = sqrt(s / 2) weights the log term per scale
        l2 = l2 + math.sqrt(w / 2) * diff.pow(2).mean(dim=1).clamp_min(0).sqrt().mean()
    n = len(windows)
    return l1 / n, l2 / n


def log_mel_features(samples: np.ndarray, sample_rate: int = 24000, n_mels: int = 64, hop: int = 480, win: int = 960) -> np.ndarray:
    """Log-mel frames at ``sample_rate / hop`` Hz; exactly ``ceil(N / hop)`` frames."""
    x = np.asarray(samples, dtype=np.float64)
    n_frames = max(1, math.ceil(len(x) / hop))
    n_fft = 1 << (win - 1).bit_length()
    # frame i is centered on sample i * hop + hop / 2
    left = win // 2 - hop // 2
    total = (n_frames - 1) * hop + win
    xp = np.zeros(total)
    seg = x[: max(0, total - left)]
    xp[left : left + len(seg)] = seg
    frames = np.lib.stride_tricks.sliding_window_view(xp, win)[::hop][:n_frames]
    spec = np.abs(np.fft.rfft(frames * np.hanning(win), n=n_fft, axis=1))
    mel = spec @ mel_filterbank(n_fft, n_mels, sample_rate).T
    return np.log(mel + 1e-5).astype(np.float32)

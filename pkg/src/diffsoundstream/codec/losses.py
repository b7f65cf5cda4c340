"""Multi-scale STFT discriminators and the generator/discriminator losses."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..dsp import MEL_WINDOWS, multiscale_mel_distance


class StftDiscriminator(nn.Module):
    """2-D conv stack over the complex STFT (real and imaginary channels)."""

    def __init__(self, window: int, channels: int = 16, depth: int = 3):
        super().__init__()
        self.window = window
        self.hop = window // 4
        layers = [nn.Conv2d(2, channels, (7, 7), padding=(3, 3))]
        c = channels
        for i in range(depth):
            nxt = min(c * 2, 256)
            layers.append(nn.Conv2d(c, nxt, (3, 4), stride=(1, 2), padding=(1, 1)))
            c = nxt
        self.layers = nn.ModuleList(layers)
        self.out = nn.Conv2d(c, 1, (3, 3), padding=(1, 1))

    def forward(self, x: torch.Tensor):
        """``(B, N)`` audio -> (logits, list of intermediate feature maps)."""
        win = torch.hann_window(self.window, dtype=x.dtype, device=x.device)
        spec = torch.stft(x, self.window, self.hop, window=win, return_complex=True, pad_mode="constant")
        h = torch.stack([spec.real, spec.imag], dim=1).transpose(2, 3)  # (B, 2, T, F)
        feats = []
        for layer in self.layers:
            h = F.leaky_relu(layer(h), 0.2)
            feats.append(h)
        return self.out(h), feats


class MultiScaleStftDiscriminator(nn.Module):
    def __init__(self, windows=(512, 1024, 2048), channels: int = 16):
        super().__init__()
        self.discs = nn.ModuleList(StftDiscriminator(w, channels) for w in windows)

    def forward(self, x):
        return [d(x) for d in self.discs]


def discriminator_hinge(real_out, fake_out) -> torch.Tensor:
    loss = 0.0
    for (lr, _), (lf, _) in zip(real_out, fake_out):
        loss = loss + F.relu(1 - lr).mean() + F.relu(1 + lf).mean()
    return loss / len(real_out)


def generator_hinge(fake_out) -> torch.Tensor:
    return sum(F.relu(1 - lf).mean() for lf, _ in fake_out) / len(fake_out)


def feature_matching(real_out, fake_out) -> torch.Tensor:
    """Mean L1 distance of discriminator features, averaged over layers and scales."""
    loss = 0.0
    for (_, fr), (_, ff) in zip(real_out, fake_out):
        per = [(a.detach() - b).abs().mean() for a, b in zip(fr, ff)]
        loss = loss + sum(per) / len(per)
    return loss / len(real_out)


def reconstruction_loss(ref, hyp, windows=MEL_WINDOWS):
    l1, l2 = multiscale_mel_distance(ref, hyp, windows)
    return l1 + l2, l1, l2

"""Convolutional building blocks: non-causal "same" convolutions, FiLM, alignment."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def same_pad(x: torch.Tensor, kernel: int, stride: int = 1, dilation: int = 1, mode: str = "replicate") -> torch.Tensor:
    """Pad ``(B, C, L)`` so a strided conv yields ``ceil(L / stride)`` frames."""
    length = x.shape[-1]
    out = math.ceil(length / stride)
    span = dilation * (kernel - 1) + 1
    total = max((out - 1) * stride + span - length, 0)
    left = total // 2
    if total == 0:
        return x
    if mode == "replicate" or length > 1:
        return F.pad(x, (left, total - left), mode=mode)
    return F.pad(x, (left, total - left))


def variance_preserving_init(module: nn.Module) -> nn.Module:
    """Unit-gain fan-in init for every conv; the default init shrinks the
    signal at each layer until deep encoders emit little more than biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="linear")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    return module


class SameConv1d(nn.Conv1d):
    def __init__(self, c_in, c_out, kernel, stride=1, dilation=1, pad_mode="replicate"):
        super().__init__(c_in, c_out, kernel, stride=stride, dilation=dilation)
        self.pad_mode = pad_mode

    def forward(self, x):
        return super().forward(same_pad(x, self.kernel_size[0], self.stride[0], self.dilation[0], self.pad_mode))


class UpConv1d(nn.ConvTranspose1d):
    """Transposed conv producing exactly ``L * stride`` frames."""

    def __init__(self, c_in, c_out, stride):
        super().__init__(c_in, c_out, kernel_size=2 * stride, stride=stride)
        self.up = stride

    def forward(self, x):
        y = super().forward(x)  # (L + 1) * stride frames
        left = self.up // 2
        return y[..., left : left + x.shape[-1] * self.up]


class ResidualUnit(nn.Module):
    def __init__(self, channels: int, dilation: int, kernel: int = 7):
        super().__init__()
        self.conv = SameConv1d(channels, channels, kernel, dilation=dilation)
        self.proj = nn.Conv1d(channels, channels, 1)

    def forward(self, x):
        return x + self.proj(F.elu(self.conv(F.elu(x))))


class EncoderBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int, dilations=(1, 3, 9)):
        super().__init__()
        self.units = nn.Sequential(*[ResidualUnit(c_in, d) for d in dilations])
        self.down = SameConv1d(c_in, c_out, 2 * stride, stride=stride)

    def forward(self, x):
        return self.down(F.elu(self.units(x)))


class DecoderBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int, dilations=(1, 3, 9)):
        super().__init__()
        self.up = UpConv1d(c_in, c_out, stride)
        self.units = nn.Sequential(*[ResidualUnit(c_out, d) for d in dilations])

    def forward(self, x):
        return self.units(self.up(F.elu(x)))


class FiLM(nn.Module):
    """``scale(cond) * x + shift(cond)`` with per-channel linear maps.

    Both maps start at zero with the scale offset by one, so the layer is the
    identity at initialization.
    """

    def __init__(self, cond_channels: int, channels: int):
        super().__init__()
        self.to_scale = nn.Conv1d(cond_channels, channels, 1)
        self.to_shift = nn.Conv1d(cond_channels, channels, 1)
        for m in (self.to_scale, self.to_shift):
            nn.init.zeros_(m.weight)
            nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-1] != x.shape[-1]:
            raise ValueError(f"conditioning length {cond.shape[-1]} does not match activation length {x.shape[-1]}")
        return (1.0 + self.to_scale(cond)) * x + self.to_shift(cond)


class ConditionAligner(nn.Module):
    """Token embeddings at 12.5 Hz -> transposed conv to a FiLM site's shape."""

    def __init__(self, num_tokens: int, embed_dim: int, channels: int, factor: int):
        super().__init__()
        self.embed = nn.Embedding(num_tokens, embed_dim)
        self.factor = factor
        self.up = nn.ConvTranspose1d(embed_dim, channels, kernel_size=factor, stride=factor)

    def forward(self, ids: torch.Tensor, target_len: int) -> torch.Tensor:
        return align_condition(self.up, self.embed(ids).transpose(1, 2), target_len)


def align_condition(up: nn.ConvTranspose1d, embeds: torch.Tensor, target_len: int) -> torch.Tensor:
    """Map ``(B, E, F)`` embeddings to ``(B, depth, target_len)``.

    The transposed conv lands on ``F * factor`` frames; the result is cropped,
    or edge-replicated when the activation is longer.
    """
    y = up(embeds)
    if y.shape[-1] >= target_len:
        return y[..., :target_len]
    return F.pad(y, (0, target_len - y.shape[-1]), mode="replicate")

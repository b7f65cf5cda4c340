"""SS-SC (semantic-conditioned, RVQ, 12.5 Hz) and SS-CL (continuous, 50 Hz) autoencoders."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..quant import ResidualVQ
from .layers import (
    ConditionAligner,
    DecoderBlock,
    EncoderBlock,
    FiLM,
    SameConv1d,
    variance_preserving_init,
)


@dataclass
class SsScConfig:
    strides: tuple = (8, 8, 6, 5)
    rvq_depth: int = 8
    codebook_size: int = 2048
    film_embed_dim: int = 256
    semantic_vocab: int = 2048
    latent_dim: int = 64
    base_channels: int = 32
    dilations: tuple = (1, 3, 9)
    semantic: bool = True

    @property
    def hop(self) -> int:
        return math.prod(self.strides)

    def to_dict(self):
        return asdict(self)


@dataclass
class SsClConfig:
    strides: tuple = (8, 5, 4, 3)
    latent_dim: int = 24
    noise_rel_std: float = 0.2
    noise_prob: float = 0.5
    clip_range: tuple = (-1.0, 1.0)
    base_channels: int = 32
    dilations: tuple = (1, 3, 9)
    std_momentum: float = 0.99

    @property
    def hop(self) -> int:
        return math.prod(self.strides)

    def to_dict(self):
        return asdict(self)


class Encoder(nn.Module):
    def __init__(self, strides, base, latent_dim, dilations):
        super().__init__()
        self.stem = SameConv1d(1, base, 7)
        chans = [base * 2**i for i in range(len(strides) + 1)]
        self.blocks = nn.ModuleList(
            EncoderBlock(chans[i], chans[i + 1], s, dilations) for i, s in enumerate(strides)
        )
        self.head = SameConv1d(chans[-1], latent_dim, 3)
        self.channels = chans
        variance_preserving_init(self)

    def forward(self, wave: torch.Tensor, film=None) -> torch.Tensor:
        """``(B, N)`` audio -> ``(B, D, ceil(N / hop))``; ``film(h)`` runs before the last block."""
        h = self.stem(wave[:, None])
        for i, block in enumerate(self.blocks):
            if film is not None and i == len(self.blocks) - 1:
                h = film(h)
            h = block(h)
        return self.head(F.elu(h))


class Decoder(nn.Module):
    def __init__(self, strides, base, latent_dim, dilations):
        super().__init__()
        chans = [base * 2**i for i in range(len(strides) + 1)][::-1]
        self.stem = SameConv1d(latent_dim, chans[0], 7)
        self.blocks = nn.ModuleList(
            DecoderBlock(chans[i], chans[i + 1], s, dilations) for i, s in enumerate(reversed(strides))
        )
        self.head = SameConv1d(chans[-1], 1, 7)
        self.channels = chans
        variance_preserving_init(self)

    def forward(self, z: torch.Tensor, film=None) -> torch.Tensor:
        """``(B, D, L)`` -> ``(B, L * hop)``; ``film(h)`` runs after the first block."""
        h = self.stem(z)
        for i, block in enumerate(self.blocks):
            h = block(h)
            if film is not None and i == 0:
                h = film(h)
        return torch.tanh(self.head(F.elu(h)))[:, 0]


class SemanticFilm(nn.Module):
    """One FiLM site driven by semantic token ids."""

    def __init__(self, vocab: int, embed_dim: int, channels: int, factor: int):
        super().__init__()
        self.align = ConditionAligner(vocab, embed_dim, channels, factor)
        self.film = FiLM(channels, channels)

    def forward(self, h: torch.Tensor, sem: torch.Tensor) -> torch.Tensor:
        return self.film(h, self.align(sem, h.shape[-1]))


def match_frames(ids: torch.Tensor, frames: int) -> torch.Tensor:
    """Trim or edge-extend ``(B, F')`` token ids to ``frames`` (boundary frame slack)."""
    have = ids.shape[-1]
    if abs(have - frames) > 1:
        raise ValueError(f"semantic tokens cover {have} frames but the audio needs {frames} (tolerance 1)")
    if have >= frames:
        return ids[..., :frames]
    return torch.cat([ids, ids[..., -1:]], dim=-1)


class SsSc(nn.Module):
    def __init__(self, cfg: SsScConfig = SsScConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg.strides, cfg.base_channels, cfg.latent_dim, cfg.dilations)
        self.decoder = Decoder(cfg.strides, cfg.base_channels, cfg.latent_dim, cfg.dilations)
        self.rvq = ResidualVQ(cfg.rvq_depth, cfg.codebook_size, cfg.latent_dim)
        if cfg.semantic:
            enc_ch = self.encoder.channels[-2]
            dec_ch = self.decoder.channels[1]
            self.enc_film = SemanticFilm(cfg.semantic_vocab, cfg.film_embed_dim, enc_ch, cfg.strides[-1])
            self.dec_film = SemanticFilm(cfg.semantic_vocab, cfg.film_embed_dim, dec_ch, cfg.strides[-1])

    def frames_for(self, num_samples: int) -> int:
        return math.ceil(num_samples / self.cfg.hop)

    def _sem(self, sem, frames):
        if not self.cfg.semantic:
            return None
        if sem is None:
            raise ValueError("this SS-SC model is semantic-conditioned; semantic tokens are required")
        return match_frames(sem, frames)

    def encode(self, wave: torch.Tensor, sem: torch.Tensor | None) -> torch.Tensor:
        """``(B, N)`` audio -> ``(B, F, D)`` pre-quantization frames."""
        sem = self._sem(sem, self.frames_for(wave.shape[-1]))
        film = (lambda h: self.enc_film(h, sem)) if sem is not None else None
        return self.encoder(wave, film).transpose(1, 2)

    def decode_latent(self, q: torch.Tensor, sem: torch.Tensor | None) -> torch.Tensor:
        sem = self._sem(sem, q.shape[1])
        if sem is not None and sem.shape[-1] != q.shape[1]:
            raise ValueError("semantic and acoustic token grids are misaligned")
        film = (lambda h: self.dec_film(h, sem)) if sem is not None else None
        return self.decoder(q.transpose(1, 2), film)

    def decode(self, ids: torch.Tensor, sem: torch.Tensor | None) -> torch.Tensor:
        """``(B, F, depth)`` ids -> ``(B, F * 1920)`` audio."""
        if sem is not None and self.cfg.semantic and sem.shape[-1] != ids.shape[1]:
            raise ValueError(f"semantic ({sem.shape[-1]}) and acoustic ({ids.shape[1]}) frame counts differ")
        return self.decode_latent(self.rvq.decode_ids(ids), sem)

    def forward(self, wave, sem, depth=None):
        z = self.encode(wave, sem)
        q, ids, commit, residuals = self.rvq(z, depth)
        out = self.decode_latent(q, sem)[..., : wave.shape[-1]]
        return out, ids, commit, residuals


class SsCl(nn.Module):
    def __init__(self, cfg: SsClConfig = SsClConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg.strides, cfg.base_channels, cfg.latent_dim, cfg.dilations)
        self.decoder = Decoder(cfg.strides, cfg.base_channels, cfg.latent_dim, cfg.dilations)
        self.register_buffer("latent_std", torch.ones(cfg.latent_dim))
        self.register_buffer("std_initted", torch.tensor(False))
        self.last_overflow = torch.zeros(())

    def frames_for(self, num_samples: int) -> int:
        return math.ceil(num_samples / self.cfg.hop)

    def encode(self, wave: torch.Tensor, training: bool = False, gen: torch.Generator | None = None) -> torch.Tensor:
        """``(B, N)`` audio -> ``(B, T, 24)`` latents in the clip range.

        In training mode the running per-dimension latent std is updated and,
        on a coin flip with probability ``noise_prob``, Gaussian noise of
        ``noise_rel_std`` times that std is added before clipping.
        """
        z = self.encoder(wave).transpose(1, 2)
        lo, hi = self.cfg.clip_range
        if training:
            with torch.no_grad():
                batch_std = z.detach().reshape(-1, z.shape[-1]).std(0, unbiased=False)
                if not bool(self.std_initted):
                    self.latent_std.copy_(batch_std)
                    self.std_initted.fill_(True)
                else:
                    m = self.cfg.std_momentum
                    self.latent_std.mul_(m).add_(batch_std, alpha=1 - m)
            gen = gen or torch.Generator().manual_seed(0)
            if float(torch.rand((), generator=gen)) < self.cfg.noise_prob:
                noise = torch.randn(z.shape, generator=gen, dtype=z.dtype)
                z = z + noise * (self.cfg.noise_rel_std * self.latent_std)
        if training:
            # saturated latents get no gradient through the clamp; this term
            # pulls them back inside the range
            self.last_overflow = (F.relu(z - hi) + F.relu(lo - z)).pow(2).mean()
        return z.clamp(lo, hi)

    def decode(self, lat: torch.Tensor) -> torch.Tensor:
        """``(B, T, 24)`` latents -> ``(B, T * 480)`` audio."""
        if lat.shape[-1] != self.cfg.latent_dim:
            raise ValueError(f"latent dim {lat.shape[-1]} != {self.cfg.latent_dim}")
        return self.decoder(lat.transpose(1, 2))

    def forward(self, wave, training=True, gen=None):
        z = self.encode(wave, training, gen)
        return self.decode(z)[..., : wave.shape[-1]], z


@dataclass
class LatentStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(self.std <= 1e-8):
            dims = np.flatnonzero(self.std <= 1e-8).tolist()
            raise ValueError(f"degenerate latent: zero standard deviation in dimension(s) {dims}")

    @classmethod
    def from_latents(cls, latents) -> "LatentStats":
        frames = np.concatenate([np.asarray(l, dtype=np.float64).reshape(-1, np.shape(l)[-1]) for l in latents])
        return cls(frames.mean(0), frames.std(0))

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


def _as(arr, like):
    if isinstance(like, torch.Tensor):
        return torch.as_tensor(arr, dtype=like.dtype, device=like.device)
    return arr


def latent_normalize(lat, stats: LatentStats):
    return (lat - _as(stats.mean, lat)) / _as(stats.std, lat)


def latent_denormalize(lat, stats: LatentStats):
    return lat * _as(stats.std, lat) + _as(stats.mean, lat)

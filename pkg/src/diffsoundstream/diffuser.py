"""WaveNet latent diffuser conditioned on semantic and acoustic tokens."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .sched import Schedule, alpha_sigma
from .tokens import ConditioningSpec

UPSAMPLE = 4


@dataclass
class DiffuserConfig:
    blocks: int = 5
    layers_per_block: int = 5
    dilations: tuple = (1, 2, 4, 8, 16)
    channels: int = 512
    io_dim: int = 24
    embed_dim: int = 256
    vocab_size: int = 2048
    time_features: int = 128
    kernel: int = 3

    def __post_init__(self):
        if len(self.dilations) != self.layers_per_block:
            raise ValueError("one dilation per residual layer in each block")

    def to_dict(self):
        return asdict(self)


class TokenEmbedder(nn.Module):
    """One embedding table per token level; levels are averaged per frame."""

    def __init__(self, spec: ConditioningSpec, vocab: int, dim: int):
        super().__init__()
        self.spec = spec
        self.tables = nn.ModuleList(nn.Embedding(vocab, dim) for _ in range(spec.depth))

    def forward(self, sem: torch.Tensor | None, ac: torch.Tensor) -> torch.Tensor:
        """``sem`` ``(B, F)`` and ``ac`` ``(B, F, depth)`` -> ``(B, F, dim)``."""
        return embed_and_pool(self.tables, sem, ac, self.spec)


def embed_and_pool(tables, sem, ac, spec: ConditioningSpec) -> torch.Tensor:
    if ac.shape[-1] < spec.n_a:
        raise ValueError(f"acoustic tokens have depth {ac.shape[-1]}, need n_a={spec.n_a}")
    levels = []
    if spec.n_s:
        if sem is None:
            raise ValueError("this conditioning spec needs semantic tokens (n_s=1)")
        if sem.shape[-1] != ac.shape[-2]:
            raise ValueError(f"semantic ({sem.shape[-1]}) and acoustic ({ac.shape[-2]}) frame counts differ")
        levels.append(sem)
    levels.extend(ac[..., i] for i in range(spec.n_a))
    return torch.stack([table(ids) for table, ids in zip(tables, levels)]).mean(0)


def upsample_nn(cond: torch.Tensor, target_len: int | None = None) -> torch.Tensor:
    """Repeat each 12.5 Hz frame 4x along dim -2, then trim to ``target_len``."""
    up = cond.repeat_interleave(UPSAMPLE, dim=-2)
    if target_len is None:
        return up
    if not 0 <= up.shape[-2] - target_len <= UPSAMPLE - 1:
        raise ValueError(f"cannot align {cond.shape[-2]} token frames with {target_len} latent frames")
    return up[..., :target_len, :]


def timestep_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    arg = 1000.0 * t[:, None] * freqs[None]
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)


class ResidualLayer(nn.Module):
    """Gated dilated conv with local (per-frame) and global (time) conditioning."""

    def __init__(self, channels: int, cond_dim: int, dilation: int, kernel: int = 3):
        super().__init__()
        self.dilation = dilation
        self.conv = nn.Conv1d(channels, 2 * channels, kernel, dilation=dilation, padding=dilation * (kernel - 1) // 2)
        self.cond = nn.Conv1d(cond_dim, 2 * channels, 1)
        self.time = nn.Linear(channels, 2 * channels)
        self.res = nn.Conv1d(channels, channels, 1)
        self.skip = nn.Conv1d(channels, channels, 1)

    def forward(self, x, cond, temb):
        h = self.conv(x) + self.cond(cond) + self.time(temb)[:, :, None]
        a, b = h.chunk(2, dim=1)
        h = torch.tanh(a) * torch.sigmoid(b)
        return (x + self.res(h)) / math.sqrt(2.0), self.skip(h)


class WaveNet(nn.Module):
    def __init__(self, cfg: DiffuserConfig):
        super().__init__()
        c = cfg.channels
        self.cfg = cfg
        self.inp = nn.Conv1d(cfg.io_dim, c, 1)
        self.time_mlp = nn.Sequential(nn.Linear(cfg.time_features, c), nn.SiLU(), nn.Linear(c, c))
        self.layers = nn.ModuleList(
            ResidualLayer(c, cfg.embed_dim, d, cfg.kernel) for _ in range(cfg.blocks) for d in cfg.dilations
        )
        self.out1 = nn.Conv1d(c, c, 1)
        self.out2 = nn.Conv1d(c, cfg.io_dim, 1)
        nn.init.zeros_(self.out2.weight)
        nn.init.zeros_(self.out2.bias)

    def forward(self, z, t, cond):
        """``z`` ``(B, T, io)``, ``t`` ``(B,)``, ``cond`` ``(B, T, E)`` -> ``(B, T, io)``."""
        temb = self.time_mlp(timestep_features(t, self.cfg.time_features))
        x = self.inp(z.transpose(1, 2))
        c = cond.transpose(1, 2)
        skips = 0
        for layer in self.layers:
            x, s = layer(x, c, temb)
            skips = skips + s
        h = F.relu(self.out1(F.relu(skips / math.sqrt(len(self.layers)))))
        return self.out2(h).transpose(1, 2)


@dataclass
class TokenCond:
    """Raw token conditioning, embedded by whichever model receives it.

    Distillation trains copies of the diffuser whose embedding tables drift
    apart, so each copy must embed the tokens itself.
    """

    sem: torch.Tensor | None
    ac: torch.Tensor
    latent_len: int | None = None

    @property
    def batch(self) -> int:
        return self.ac.shape[0]

    @property
    def length(self) -> int:
        return self.latent_len if self.latent_len is not None else UPSAMPLE * self.ac.shape[-2]


class Diffuser(nn.Module):
    """Token embeddings + WaveNet v-predictor bound to one ``ConditioningSpec``."""

    def __init__(self, cfg: DiffuserConfig = DiffuserConfig(), spec: ConditioningSpec = ConditioningSpec()):
        super().__init__()
        self.cfg, self.spec = cfg, spec
        self.embedder = TokenEmbedder(spec, cfg.vocab_size, cfg.embed_dim)
        self.net = WaveNet(cfg)
        self.calls = 0

    def condition(self, sem, ac, latent_len: int) -> torch.Tensor:
        """12.5 Hz tokens -> ``(B, latent_len, E)`` local conditioning at 50 Hz."""
        return upsample_nn(self.embedder(sem, ac), latent_len)

    def forward(self, z_t, t, cond):
        if z_t.dim() != 3 or z_t.shape[-1] != self.cfg.io_dim:
            raise ValueError(f"expected latents shaped (B, T, {self.cfg.io_dim}), got {tuple(z_t.shape)}")
        if isinstance(cond, TokenCond):
            cond = self.condition(cond.sem, cond.ac, z_t.shape[1])
        if cond.shape[:2] != z_t.shape[:2] or cond.shape[-1] != self.cfg.embed_dim:
            raise ValueError(f"conditioning {tuple(cond.shape)} does not match latents {tuple(z_t.shape)}")
        if not torch.is_tensor(t) or t.dim() == 0:
            t = torch.full((z_t.shape[0],), float(t), dtype=z_t.dtype)
        self.calls += 1
        return self.net(z_t, t.to(z_t.dtype), cond)

    def latent_shape(self, cond):
        if isinstance(cond, TokenCond):
            return (cond.batch, cond.length, self.cfg.io_dim)
        return (cond.shape[0], cond.shape[1], self.cfg.io_dim)


def diffusion_loss(model, x: torch.Tensor, cond, sched: Schedule, gen: torch.Generator | None = None,
                   t: torch.Tensor | None = None, eps: torch.Tensor | None = None) -> torch.Tensor:
    """Unweighted v-prediction MSE with ``t ~ U[0, 1]`` per example.

    ``t`` and ``eps`` are drawn from ``gen`` unless given.
    """
    if t is None:
        t = torch.rand(x.shape[0], generator=gen, dtype=x.dtype)
    if eps is None:
        eps = torch.randn(x.shape, generator=gen, dtype=x.dtype)
    a, b = alpha_sigma(sched, t.view(-1, *([1] * (x.dim() - 1))))
    z_t = a * x + b * eps
    loss = ((model(z_t, t, cond) - (a * eps - b * x)) ** 2).mean()
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite diffusion loss")
    return loss

"""One-dimensional Gaussian-mixture domain for checking samplers and distillation.

The full speech pipeline cannot verify distillation quality without a large
corpus, so the sampler stack is exercised here on scalar data where teacher
and student sample distributions can be compared directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .sched import Schedule, alpha_sigma


@dataclass(frozen=True)
class Mixture:
    means: tuple = (-2.0, 2.0)
    std: float = 0.5

    def sample(self, n: int, gen: torch.Generator) -> torch.Tensor:
        idx = torch.randint(0, len(self.means), (n, 1), generator=gen)
        centers = torch.tensor(self.means)[idx]
        return centers + self.std * torch.randn(n, 1, generator=gen)

    @property
    def variance(self) -> float:
        mu = sum(self.means) / len(self.means)
        return self.std**2 + sum((m - mu) ** 2 for m in self.means) / len(self.means)


class ToyDenoiser(nn.Module):
    """Small MLP v-predictor for scalar latents of shape ``(B, 1)``."""

    def __init__(self, width: int = 64, n_freq: int = 8):
        super().__init__()
        self.register_buffer("freqs", math.pi * torch.arange(1, n_freq + 1, dtype=torch.float32))
        self.net = nn.Sequential(
            nn.Linear(1 + 2 * n_freq, width),
            nn.SiLU(),
            nn.Linear(width, width),
            nn.SiLU(),
            nn.Linear(width, width),
            nn.SiLU(),
            nn.Linear(width, 1),
        )
        self.calls = 0

    def forward(self, z, t, cond=None):
        self.calls += 1
        if not torch.is_tensor(t):
            t = torch.full((z.shape[0],), float(t), dtype=z.dtype)
        phase = t.to(z.dtype)[:, None] * self.freqs.to(z.dtype)
        return self.net(torch.cat([z, torch.sin(phase), torch.cos(phase)], dim=-1))

    def latent_shape(self, cond):
        return cond


def train_teacher(
    mixture: Mixture = Mixture(),
    steps: int = 6000,
    batch: int = 512,
    lr: float = 2e-3,
    final_lr: float = 1e-5,
    seed: int = 0,
    width: int = 64,
    sched: Schedule | None = None,
) -> ToyDenoiser:
    """Fit a ``ToyDenoiser`` to the mixture with the unweighted v-loss."""
    sched = sched or Schedule()
    torch.manual_seed(seed)
    model = ToyDenoiser(width=width)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    decay = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps, eta_min=final_lr)
    gen = torch.Generator().manual_seed(seed + 1)
    for _ in range(steps):
        x = mixture.sample(batch, gen)
        t = torch.rand(batch, generator=gen)
        eps = torch.randn(x.shape, generator=gen)
        a, b = alpha_sigma(sched, t[:, None])
        loss = ((model(a * x + b * eps, t) - (a * eps - b * x)) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        decay.step()
    model.eval()
    model.calls = 0
    return model


def mixture_stream(mixture: Mixture, batch: int, seed: int):
    """Endless ``(x, None)`` batches for ``distill_moment_matching``."""
    gen = torch.Generator().manual_seed(seed)
    while True:
        yield mixture.sample(batch, gen), None

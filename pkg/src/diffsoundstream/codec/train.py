"""One optimization step of adversarial autoencoder training (SS-SC or SS-CL)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..quant import MAX_RVQ_DEPTH
from .losses import (
    MultiScaleStftDiscriminator,
    discriminator_hinge,
    feature_matching,
    generator_hinge,
    reconstruction_loss,
)
from .models import SsCl, SsSc


class TrainingError(RuntimeError):
    pass


@dataclass
class GanConfig:
    lr: float = 1e-4
    betas: tuple = (0.5, 0.9)
    adv_weight: float = 1.0
    feat_weight: float = 100.0
    rec_weight: float = 1.0
    commit_weight: float = 1.0
    adv_start: int = 0
    grad_clip: float = 10.0


class GanTrainer:
    """Owns the generator/discriminator optimizers for one autoencoder."""

    def __init__(self, model: nn.Module, disc: MultiScaleStftDiscriminator, cfg: GanConfig = GanConfig()):
        self.model, self.disc, self.cfg = model, disc, cfg
        self.opt_g = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.step_count = 0
        self.last_residuals: list = []

    @property
    def adversarial(self) -> bool:
        return self.step_count >= self.cfg.adv_start and (self.cfg.adv_weight > 0 or self.cfg.feat_weight > 0)

    def step(self, wave: torch.Tensor, sem: torch.Tensor | None, gen: torch.Generator) -> dict:
        cfg = self.cfg
        self.model.train()
        if isinstance(self.model, SsSc):
            depth = torch.randint(1, self.model.rvq.max_depth + 1, (wave.shape[0],), generator=gen)
            fake, _, commit, self.last_residuals = self.model(wave, sem, depth)
        elif isinstance(self.model, SsCl):
            fake, _ = self.model(wave, training=True, gen=gen)
            commit = self.model.last_overflow
        else:
            raise TypeError(f"unsupported model {type(self.model).__name__}")
        rec, l1, l2 = reconstruction_loss(wave, fake)

        losses = {k: float(v.detach()) for k, v in (("rec", rec), ("l1", l1), ("l2", l2), ("commit", commit))}
        adv = feat = disc_loss = wave.new_zeros(())
        use_adv = self.adversarial
        if use_adv:
            fake_out = self.disc(fake)
            with torch.no_grad():
                real_out = self.disc(wave)
            adv = generator_hinge(fake_out)
            feat = feature_matching(real_out, fake_out)
        total = cfg.rec_weight * rec + cfg.commit_weight * commit + cfg.adv_weight * adv + cfg.feat_weight * feat
        losses.update(adv=float(adv.detach()), feat=float(feat.detach()), total=float(total.detach()))
        if not math.isfinite(losses["total"]):
            raise TrainingError(f"non-finite generator loss at step {self.step_count}: {losses}")

        self.opt_g.zero_grad()
        total.backward()
        nn.utils.clip_grad_norm_(self.model.parameters(), cfg.grad_clip)
        self.opt_g.step()

        if use_adv:
            both = self.disc(torch.cat([wave, fake.detach()]))
            b = wave.shape[0]
            real_d = [(lg[:b], None) for lg, _ in both]
            fake_d = [(lg[b:], None) for lg, _ in both]
            disc_loss = discriminator_hinge(real_d, fake_d)
            if not math.isfinite(float(disc_loss.detach())):
                raise TrainingError(f"non-finite discriminator loss at step {self.step_count}")
            self.opt_d.zero_grad()
            disc_loss.backward()
            nn.utils.clip_grad_norm_(self.disc.parameters(), cfg.grad_clip)
            self.opt_d.step()
        losses["disc"] = float(disc_loss.detach())
        self.step_count += 1
        return losses


def gan_train_step(batch, model, disc, trainer: GanTrainer | None = None, gen: torch.Generator | None = None) -> tuple[dict, GanTrainer]:
    """Functional entry point: ``batch`` is ``wave`` or ``(wave, sem)``."""
    trainer = trainer or GanTrainer(model, disc)
    wave, sem = batch if isinstance(batch, tuple) else (batch, None)
    losses = trainer.step(wave, sem, gen or torch.Generator().manual_seed(trainer.step_count))
    return losses, trainer

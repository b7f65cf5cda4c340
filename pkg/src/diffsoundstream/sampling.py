"""DDPM ancestral sampling and moment-matching step distillation.

Models used here follow one calling convention: ``model(z_t, t, cond)``
returns the v-prediction with the same shape as ``z_t``. ``t`` is a python
float shared by the whole batch during sampling and a ``(B,)`` tensor during
training.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import torch
import torch.nn as nn

from .sched import DiffusionState, Schedule, alpha_sigma, recover_x, v_target

log = logging.getLogger(__name__)

STUDENT_STEPS = 4


class SamplingError(RuntimeError):
    pass


class DistillationDiverged(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    num_steps: int = 100
    variance_mode: str = "small"
    seed: int = 0

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.variance_mode not in ("small", "large"):
            raise ValueError(f"variance_mode must be 'small' or 'large', got {self.variance_mode!r}")


@dataclass
class DistillConfig:
    student_steps: int = STUDENT_STEPS
    finetune_steps: int = 150_000
    lr: float = 1e-6
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    aux_lr: float | None = None
    aux_per_student: int = 1
    seed: int = 0
    grad_clip: float = 1.0
    z_source: str = "student"
    target_time: str = "next"
    student_weight: str = "none"  # or "snr": scale by 1 / b_s^2, the v-loss weighting
    divergence_factor: float = 10.0
    divergence_patience: int = 1000
    log_every: int = 0


def step_generator(seed: int, step: int) -> torch.Generator:
    """Generator keyed on (seed, step) so resumed runs replay identical noise."""
    return torch.Generator().manual_seed((seed * 1_000_003 + step) % (2**63))


def time_grid(num_steps: int) -> list[float]:
    """Uniform descending grid ``[1, ..., 1/num_steps, 0]``."""
    return [i / num_steps for i in range(num_steps, -1, -1)]


def posterior(sched: Schedule, t: float, s: float, z_t, x_hat):
    """Mean and the two DDPM variance choices of ``q(z_s | z_t, x)``, ``s < t``."""
    a_t, b_t = alpha_sigma(sched, t)
    a_s, b_s = alpha_sigma(sched, s)
    a_ts = a_t / a_s
    var_ts = b_t**2 - a_ts**2 * b_s**2
    mean = (a_ts * b_s**2 / b_t**2) * z_t + (a_s * var_ts / b_t**2) * x_hat
    return mean, var_ts * b_s**2 / b_t**2, var_ts


def ancestral_sample(
    model: Callable,
    cond,
    sched: Schedule,
    grid: list[float],
    shape,
    rng: torch.Generator,
    variance_mode: str = "small",
    dtype=torch.float32,
    z_init: torch.Tensor | None = None,
) -> torch.Tensor:
    """Run the reverse chain over ``grid`` (descending, ending at 0).

    The last transition returns the denoised prediction itself, so no noise is
    injected at the final step.
    """
    if grid[0] != 1.0 or grid[-1] != 0.0:
        raise ValueError("grid must start at 1 and end at 0")
    z = torch.randn(shape, generator=rng, dtype=dtype) if z_init is None else z_init
    for k in range(len(grid) - 1):
        t, s = grid[k], grid[k + 1]
        v = model(z, t, cond)
        x_hat = recover_x(DiffusionState(z_t=z, t=t), v, sched)
        if s == 0.0:
            z = x_hat
        else:
            mean, var_small, var_large = posterior(sched, t, s, z, x_hat)
            var = var_small if variance_mode == "small" else var_large
            noise = torch.randn(shape, generator=rng, dtype=dtype)
            z = mean + math.sqrt(var) * noise
        if not torch.isfinite(z).all():
            raise SamplingError(f"non-finite state at step {k} (t={t})")
    return z


@torch.no_grad()
def ddpm_sample(model, cond, sched: Schedule, cfg: SamplerConfig, rng: torch.Generator | None = None, shape=None):
    """Teacher sampling on a uniform ``cfg.num_steps`` grid.

    ``shape`` defaults to ``model.latent_shape(cond)``.
    """
    if rng is None:
        rng = torch.Generator().manual_seed(cfg.seed)
    if shape is None:
        shape = model.latent_shape(cond)
    return ancestral_sample(model, cond, sched, time_grid(cfg.num_steps), shape, rng, cfg.variance_mode)


@torch.no_grad()
def student_sample(student, cond, rng: torch.Generator, sched: Schedule | None = None, shape=None, variance_mode="small"):
    """Four ancestral steps on the grid {1, 0.75, 0.5, 0.25} -> 0."""
    sched = sched or Schedule()
    if shape is None:
        shape = student.latent_shape(cond)
    return ancestral_sample(student, cond, sched, time_grid(STUDENT_STEPS), shape, rng, variance_mode)


def _x_pred(model, z, t, cond, sched):
    tb = _bcast(t, z) if torch.is_tensor(t) and t.dim() == 1 else t
    return recover_x(DiffusionState(z_t=z, t=tb), model(z, t, cond), sched)


def init_from_teacher(teacher: nn.Module) -> tuple[nn.Module, nn.Module]:
    """Fresh student and auxiliary copies with the teacher's exact parameters."""
    student = copy.deepcopy(teacher)
    aux = copy.deepcopy(teacher)
    for m in (student, aux):
        m.train()
        for p in m.parameters():
            p.requires_grad_(True)
    return student, aux


@dataclass
class DistillState:
    step: int = 0
    aux_losses: list = field(default_factory=list)
    moment_gaps: list = field(default_factory=list)


def distill_moment_matching(
    teacher: nn.Module,
    aux: nn.Module,
    student: nn.Module,
    data_stream: Iterable,
    cfg: DistillConfig,
    sched: Schedule | None = None,
    state: DistillState | None = None,
    optimizers: tuple | None = None,
) -> nn.Module:
    """Moment-matching distillation into a ``cfg.student_steps`` sampler.

    ``data_stream`` yields ``(x, cond)`` batches of clean (normalized) latents.
    Every iteration draws a student grid time ``t`` and a state ``z_t`` (from
    the student's own chain by default, or by diffusing ``x`` when
    ``cfg.z_source == "data"``), takes the student prediction ``x~`` and
    re-noises it to ``z_s ~ q(z_s | z_t, x~)`` at the next grid time. The
    auxiliary model fits the plain diffusion loss on these student samples;
    the student then moves ``x~`` against ``aux(z_s) - teacher(z_s)``, the
    score-difference estimate of the reverse-KL gradient.
    """
    sched = sched or Schedule()
    state = state or DistillState()
    for p in teacher.parameters():
        p.requires_grad_(False)
    teacher.eval()
    if optimizers is None:
        optimizers = make_distill_optimizers(aux, student, cfg)
    opt_aux, opt_student = optimizers
    stream = iter(data_stream)
    initial = None
    bad_run = 0
    for _ in range(state.step, cfg.finetune_steps):
        x, cond = next(stream)
        gen = step_generator(cfg.seed, state.step)
        aux_loss, gap = _mm_step(teacher, aux, student, x, cond, sched, cfg, gen, opt_aux, opt_student)
        state.step += 1
        state.aux_losses.append(aux_loss)
        state.moment_gaps.append(gap)
        if not math.isfinite(aux_loss) or not math.isfinite(gap):
            raise DistillationDiverged(f"non-finite distillation loss at step {state.step}")
        if initial is None:
            initial = max(aux_loss, 1e-12)
        bad_run = bad_run + 1 if aux_loss > cfg.divergence_factor * initial else 0
        if bad_run >= cfg.divergence_patience:
            raise DistillationDiverged(
                f"aux loss above {cfg.divergence_factor}x initial for {bad_run} steps (step {state.step})"
            )
        if cfg.log_every and state.step % cfg.log_every == 0:
            log.info("distill step %d aux %.4f gap %.4g", state.step, aux_loss, gap)
    return student


def make_distill_optimizers(aux, student, cfg: DistillConfig):
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    opt_aux = torch.optim.Adam(aux.parameters(), lr=cfg.aux_lr or cfg.lr, betas=betas)
    opt_student = torch.optim.Adam(student.parameters(), lr=cfg.lr, betas=betas)
    return opt_aux, opt_student


def _bcast(t, like):
    return t.view(-1, *([1] * (like.dim() - 1)))


def _student_states(student, x, cond, sched, n, gen):
    """Run the student chain from noise to a random grid time; returns (t, z_t)."""
    k = int(torch.randint(0, n, (1,), generator=gen))
    grid = time_grid(n)
    z = torch.randn(x.shape, generator=gen, dtype=x.dtype)
    with torch.no_grad():
        for j in range(k):
            x_hat = _x_pred(student, z, grid[j], cond, sched)
            mean, var, _ = posterior(sched, grid[j], grid[j + 1], z, x_hat)
            z = mean + math.sqrt(var) * torch.randn(x.shape, generator=gen, dtype=x.dtype)
    return k, torch.full((x.shape[0],), grid[k], dtype=x.dtype), z


def _mm_step(teacher, aux, student, x, cond, sched, cfg, gen, opt_aux, opt_student):
    n = cfg.student_steps
    batch = x.shape[0]
    if cfg.z_source == "student":
        k, t, z_t = _student_states(student, x, cond, sched, n, gen)
    else:
        k = int(torch.randint(0, n, (1,), generator=gen))
        t = torch.full((batch,), 1.0 - k / n, dtype=x.dtype)
        eps = torch.randn(x.shape, generator=gen, dtype=x.dtype)
        z_t = diffuse_batch(x, eps, _bcast(t, x), sched)
    if cfg.target_time == "next" and k < n - 1:
        s = t - 1.0 / n
    else:
        # s = 0 carries no signal, so the last step draws s below t instead
        s = t * torch.rand(batch, generator=gen, dtype=x.dtype)
    tb, sb = _bcast(t, x), _bcast(s, x)

    x_tilde = recover_x(DiffusionState(z_t=z_t, t=tb), student(z_t, t, cond), sched)
    x_fixed = x_tilde.detach()
    mean, var_small, _ = posterior(sched, tb, sb, z_t, x_fixed)
    z_s = mean + var_small.sqrt() * torch.randn(x.shape, generator=gen, dtype=x.dtype)

    a_s, b_s = alpha_sigma(sched, sb)
    aux_target = v_target(x_fixed, (z_s - a_s * x_fixed) / b_s, sb, sched)
    aux_loss_val = 0.0
    for _ in range(cfg.aux_per_student):
        opt_aux.zero_grad()
        loss_aux = ((aux(z_s, s, cond) - aux_target) ** 2).mean()
        loss_aux.backward()
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(aux.parameters(), cfg.grad_clip)
        opt_aux.step()
        aux_loss_val = float(loss_aux.detach())

    with torch.no_grad():
        diff = _x_pred(aux, z_s, s, cond, sched) - _x_pred(teacher, z_s, s, cond, sched)
    opt_student.zero_grad()
    # surrogate whose gradient w.r.t. the student is diff . d(x_tilde)/d(params)
    if cfg.student_weight == "snr":
        diff = diff / b_s**2
    loss_student = (x_tilde * diff).sum() / batch
    loss_student.backward()
    if cfg.grad_clip:
        nn.utils.clip_grad_norm_(student.parameters(), cfg.grad_clip)
    opt_student.step()
    return aux_loss_val, float((diff**2).mean())


def diffuse_batch(x, eps, t, sched):
    a, b = alpha_sigma(sched, t)
    return a * x + b * eps

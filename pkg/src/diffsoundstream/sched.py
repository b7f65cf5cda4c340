"""Modified cosine noise schedule and v-parameterization algebra.

The forward process is ``z_t = a_t * x + b_t * eps`` with
``a_t = cos(theta(t))`` and ``b_t = sin(theta(t))`` where theta interpolates
linearly between ``theta0`` and ``theta1``. Time runs from 0 (clean) to 1
(noise).

All functions accept numpy arrays or torch tensors for the latent arguments.
``t`` may be a python float or, for batched training, a tensor broadcastable
against the latent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch


@dataclass(frozen=True)
class Schedule:
    theta0: float = math.atan(math.exp(-3.0))
    theta1: float = math.atan(math.exp(3.0))

    def __post_init__(self):
        if not 0.0 < self.theta0 < self.theta1 < math.pi / 2:
            raise ValueError(
                f"need 0 < theta0 < theta1 < pi/2, got {self.theta0}, {self.theta1}"
            )

    def angle(self, t):
        return self.theta0 + (self.theta1 - self.theta0) * t


@dataclass
class DiffusionState:
    z_t: Any
    t: float
    eps: Any = None


def _check_t(t):
    if isinstance(t, torch.Tensor):
        bad = bool(((t < 0) | (t > 1)).any())
    elif isinstance(t, np.ndarray):
        bad = bool(((t < 0) | (t > 1)).any())
    else:
        bad = not (0.0 <= t <= 1.0)
    if bad:
        raise ValueError(f"t must lie in [0, 1], got {t}")


def _check_shapes(a, b, what="arrays"):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch between {what}: {tuple(a.shape)} vs {tuple(b.shape)}")


def alpha_sigma(sched: Schedule, t):
    """Return ``(a_t, b_t)``; works elementwise when ``t`` is a tensor."""
    _check_t(t)
    angle = sched.angle(t)
    if isinstance(angle, torch.Tensor):
        return torch.cos(angle), torch.sin(angle)
    if isinstance(angle, np.ndarray):
        return np.cos(angle), np.sin(angle)
    return math.cos(angle), math.sin(angle)


def diffuse(x, eps, t, sched: Schedule) -> DiffusionState:
    _check_shapes(x, eps, "x and eps")
    a, b = alpha_sigma(sched, t)
    return DiffusionState(z_t=a * x + b * eps, t=t, eps=eps)


def v_target(x, eps, t, sched: Schedule):
    _check_shapes(x, eps, "x and eps")
    a, b = alpha_sigma(sched, t)
    return a * eps - b * x


def recover_x(state: DiffusionState, v, sched: Schedule):
    _check_shapes(state.z_t, v, "z_t and v")
    a, b = alpha_sigma(sched, state.t)
    return a * state.z_t - b * v


def recover_eps(state: DiffusionState, v, sched: Schedule):
    _check_shapes(state.z_t, v, "z_t and v")
    a, b = alpha_sigma(sched, state.t)
    return b * state.z_t + a * v


def log_snr(sched: Schedule, t):
    """Natural-log signal-to-noise ratio ``ln(a_t^2 / b_t^2)``."""
    _check_t(t)
    angle = sched.angle(t)
    if isinstance(angle, torch.Tensor):
        return -2.0 * torch.log(torch.tan(angle))
    if isinstance(angle, np.ndarray):
        return -2.0 * np.log(np.tan(angle))
    return -2.0 * math.log(math.tan(angle))

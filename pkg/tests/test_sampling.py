import math

import numpy as np
import pytest
import torch

from diffsoundstream.sampling import (
    DistillConfig,
    SamplerConfig,
    SamplingError,
    ancestral_sample,
    ddpm_sample,
    distill_moment_matching,
    init_from_teacher,
    posterior,
    step_generator,
    student_sample,
    time_grid,
)
from diffsoundstream.sched import Schedule, alpha_sigma
from diffsoundstream.toy import Mixture, ToyDenoiser, mixture_stream

S = Schedule()


class Zero(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.calls = 0

    def forward(self, z, t, cond=None):
        self.calls += 1
        return torch.zeros_like(z)

    def latent_shape(self, cond):
        return cond


def test_time_grid():
    assert time_grid(4) == [1.0, 0.75, 0.5, 0.25, 0.0]


def test_posterior_variances():
    z, x = torch.zeros(1), torch.zeros(1)
    _, small, large = posterior(S, 0.5, 0.25, z, x)
    a_t, b_t = alpha_sigma(S, 0.5)
    a_s, b_s = alpha_sigma(S, 0.25)
    assert large == pytest.approx(b_t**2 - (a_t / a_s) ** 2 * b_s**2)
    assert small == pytest.approx(large * b_s**2 / b_t**2)


def test_posterior_mean_is_exact_for_true_x():
    # averaging z_s ~ q(z_s | z_t, x) over z_t recovers the forward marginal a_s x
    gen = torch.Generator().manual_seed(0)
    x = torch.full((200_000,), 0.7, dtype=torch.float64)
    a_t, b_t = alpha_sigma(S, 0.6)
    z_t = a_t * x + b_t * torch.randn(x.shape, generator=gen, dtype=torch.float64)
    mean, small, _ = posterior(S, 0.6, 0.3, z_t, x)
    z_s = mean + math.sqrt(small) * torch.randn(x.shape, generator=gen, dtype=torch.float64)
    a_s, b_s = alpha_sigma(S, 0.3)
    assert float(z_s.mean()) == pytest.approx(a_s * 0.7, abs=3e-3)
    assert float(z_s.var()) == pytest.approx(b_s**2, rel=2e-2)


@pytest.mark.parametrize("mode", ["small", "large"])
def test_zero_model_oracle(mode):
    z = ddpm_sample(Zero(), (10_000, 1), S, SamplerConfig(100, mode), torch.Generator().manual_seed(0))
    assert abs(float(z.mean())) < 0.05
    assert 0.9 <= float(z.var()) <= 1.1


def test_last_step_returns_prediction():
    class Const(Zero):
        def forward(self, z, t, cond=None):
            # v such that x_hat = 0.3 everywhere
            a, b = alpha_sigma(S, t)
            return (a * z - 0.3) / b

    z = ancestral_sample(Const(), None, S, time_grid(5), (50, 1), torch.Generator().manual_seed(0))
    torch.testing.assert_close(z, torch.full((50, 1), 0.3))


def test_sampler_determinism():
    model = ToyDenoiser(width=8)
    a = ddpm_sample(model, (5, 1), S, SamplerConfig(10), torch.Generator().manual_seed(3))
    b = ddpm_sample(model, (5, 1), S, SamplerConfig(10), torch.Generator().manual_seed(3))
    assert torch.equal(a, b)


def test_student_uses_four_evaluations():
    model = Zero()
    student_sample(model, (7, 1), torch.Generator().manual_seed(0))
    assert model.calls == 4


def test_non_finite_raises():
    class Bad(Zero):
        def forward(self, z, t, cond=None):
            return torch.full_like(z, float("nan"))

    with pytest.raises(SamplingError):
        ddpm_sample(Bad(), (2, 1), S, SamplerConfig(3))


def test_sampler_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(0)
    with pytest.raises(ValueError):
        SamplerConfig(10, "medium")


def test_student_and_aux_start_as_teacher_copies():
    torch.manual_seed(0)
    teacher = ToyDenoiser(width=8)
    student, aux = init_from_teacher(teacher)
    for m in (student, aux):
        for p, q in zip(m.parameters(), teacher.parameters()):
            assert torch.equal(p, q) and p is not q


def test_step_generator_is_keyed():
    assert torch.equal(torch.randn(3, generator=step_generator(1, 5)), torch.randn(3, generator=step_generator(1, 5)))
    assert not torch.equal(torch.randn(3, generator=step_generator(1, 5)), torch.randn(3, generator=step_generator(1, 6)))


def test_distillation_is_reproducible():
    def run():
        torch.manual_seed(0)
        teacher = ToyDenoiser(width=8)
        student, aux = init_from_teacher(teacher)
        distill_moment_matching(teacher, aux, student, mixture_stream(Mixture(), 16, 0),
                                DistillConfig(finetune_steps=5, lr=1e-3))
        return torch.cat([p.flatten() for p in student.parameters()])

    assert torch.equal(run(), run())

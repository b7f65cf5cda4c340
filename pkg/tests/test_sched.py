import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from diffsoundstream.sched import (
    DiffusionState,
    Schedule,
    alpha_sigma,
    diffuse,
    log_snr,
    recover_eps,
    recover_x,
    v_target,
)

S = Schedule()


def test_endpoint_ratios():
    a0, b0 = alpha_sigma(S, 0.0)
    a1, b1 = alpha_sigma(S, 1.0)
    assert abs(b0 / a0 - math.exp(-3)) < 1e-9
    assert abs(b1 / a1 - math.exp(3)) < 1e-9


def test_log_snr_endpoints_and_monotone():
    assert abs(log_snr(S, 0.0) - 6.0) < 1e-9
    assert abs(log_snr(S, 1.0) + 6.0) < 1e-9
    grid = np.linspace(0, 1, 1001)
    assert np.all(np.diff(log_snr(S, grid)) < 0)


def test_unit_norm_on_grid():
    a, b = alpha_sigma(S, np.linspace(0, 1, 1000))
    assert np.max(np.abs(a**2 + b**2 - 1)) < 1e-12


def test_tensor_and_float_agree():
    t = torch.linspace(0, 1, 17, dtype=torch.float64)
    a, b = alpha_sigma(S, t)
    for ti, ai, bi in zip(t.tolist(), a.tolist(), b.tolist()):
        fa, fb = alpha_sigma(S, ti)
        assert ai == pytest.approx(fa, abs=1e-15) and bi == pytest.approx(fb, abs=1e-15)


@pytest.mark.parametrize("t", [-0.01, 1.5])
def test_t_out_of_range(t):
    with pytest.raises(ValueError):
        alpha_sigma(S, t)


def test_bad_schedule_rejected():
    with pytest.raises(ValueError):
        Schedule(theta0=1.0, theta1=0.5)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        diffuse(np.zeros(3), np.zeros(4), 0.5, S)
    with pytest.raises(ValueError):
        recover_x(DiffusionState(np.zeros(3), 0.5), np.zeros(2), S)


@settings(max_examples=200, deadline=None)
@given(
    shape=st.lists(st.integers(1, 5), min_size=1, max_size=3),
    t=st.floats(0, 1),
    seed=st.integers(0, 2**31 - 1),
)
def test_round_trip_property(shape, t, seed):
    rng = np.random.default_rng(seed)
    x, eps = rng.standard_normal(shape), rng.standard_normal(shape)
    state = diffuse(x, eps, t, S)
    v = v_target(x, eps, t, S)
    np.testing.assert_allclose(recover_x(state, v, S), x, atol=1e-9)
    np.testing.assert_allclose(recover_eps(state, v, S), eps, atol=1e-9)

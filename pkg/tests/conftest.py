import shutil

import numpy as np
import pytest
import torch

from diffsoundstream.pipeline import load_config, train_stage
from diffsoundstream.pipeline.artifacts import Run
from diffsoundstream.pipeline.stages import Corpus

TINY = {
    "data.synth_clips": 4,
    "data.synth_seconds": 1.0,
    "data.batch_size": 2,
    "data.crop_frames": 2,
    "ss_sc_train.steps": 3,
    "ss_sc_train.adv_start": 1,
    "ss_cl_train.steps": 3,
    "ss_cl_train.adv_start": 1,
    "diffuser.channels": 8,
    "diffuser.blocks": 1,
    "diffuser_train.steps": 3,
    "diffuser_train.batch_size": 2,
    "distill.steps": 2,
    "distill.probe_every": 1,
    "distill.probe_batch": 1,
    "distill.batch_size": 2,
    "sampling.num_steps": 8,
    "ckpt_every": 2,
}


def tiny_config(workdir, **extra):
    return load_config(None, {"workdir": str(workdir), **TINY, **extra})


def clone(cfg, tmp_path, drop=(), **extra):
    """Copy a run directory, optionally removing some stage artifacts."""
    shutil.copytree(cfg.workdir, tmp_path / "run")
    new = tiny_config(tmp_path / "run", **extra)
    for stage in drop:
        Run(new).artifact(stage).unlink()
    return new


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A run directory where every stage ran for a handful of steps."""
    cfg = tiny_config(tmp_path_factory.mktemp("tiny_run"))
    corpus = Corpus(cfg)
    for stage in ("kmeans", "ss-sc", "ss-cl", "diffuser", "distill"):
        train_stage(stage, cfg, corpus)
    return cfg


def fd_relative_error(fn, tensors, eps=1e-6, n_probe=12, seed=0):
    """Largest relative error between autograd and central differences.

    ``fn()`` returns a tensor; it is contracted with a fixed random direction
    so one backward pass gives the full gradient of a scalar. A few randomly
    chosen coordinates of every tensor are checked.
    """
    gen = torch.Generator().manual_seed(seed)
    out = fn()
    direction = torch.randn(out.shape, generator=gen, dtype=out.dtype)

    def scalar():
        return (fn() * direction).sum()

    for t in tensors:
        t.grad = None
    scalar().backward()
    worst = 0.0
    for t in tensors:
        grad = t.grad.detach().clone().reshape(-1)
        flat = t.data.reshape(-1)
        for i in torch.randperm(flat.numel(), generator=gen)[:n_probe].tolist():
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + eps
                up = scalar().item()
                flat[i] = old - eps
                down = scalar().item()
                flat[i] = old
            numeric = (up - down) / (2 * eps)
            scale = max(abs(numeric), abs(grad[i].item()), 1e-6)
            worst = max(worst, abs(numeric - grad[i].item()) / scale)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

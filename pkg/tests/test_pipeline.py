import numpy as np
import pytest
import torch

from conftest import clone, tiny_config
from diffsoundstream import bitstream
from diffsoundstream.audio import synth_dataset, write_wav
from diffsoundstream.pipeline import MissingPrerequisite, Run, SpecMismatch, load_config, read_metrics, train_stage
from diffsoundstream.pipeline.config import dump_config
from diffsoundstream.pipeline import stages
from diffsoundstream.pipeline.stages import Corpus, loss_drop
from diffsoundstream.pipeline.workflows import WorkflowError, decode_cmd, decode_tokens, tokenize_cmd, tokenize_wave
from diffsoundstream.tokens import ConditioningSpec


def test_profiles_and_overrides(tmp_path):
    full = load_config(None, base="full")
    assert full.diffuser.channels == 512 and full.distill.lr == 1e-6
    desk = load_config(None)
    assert desk.profile == "desk" and desk.diffuser.channels < 512
    cfg = load_config(None, {"distill.lr": "1e-3", "diffuser_train.batch_size": "8", "ss_cl.clip_range": "[-2, 2]"})
    assert cfg.distill.lr == 1e-3 and cfg.diffuser_train.batch_size == 8 and tuple(cfg.ss_cl.clip_range) == (-2, 2)
    with pytest.raises(KeyError):
        load_config(None, {"distill.nope": "1"})
    with pytest.raises(KeyError):
        load_config(None, base="huge")


def test_config_file_round_trip(tmp_path):
    cfg = load_config(None, {"seed": "7", "sampling.num_steps": "12"})
    dump_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again.to_dict() == cfg.to_dict()
    # explicit overrides win over the file
    assert load_config(tmp_path / "c.yaml", {"seed": "3"}).seed == 3


def test_stage_order_is_enforced(tmp_path):
    cfg = tiny_config(tmp_path)
    with pytest.raises(MissingPrerequisite, match="kmeans"):
        train_stage("ss-sc", cfg)
    with pytest.raises(MissingPrerequisite, match="diffuser"):
        Run(cfg).ensure()
        for stage in ("kmeans", "ss-sc", "ss-cl"):
            Run(cfg).artifact(stage).write_bytes(b"")  # presence is all that is checked
        train_stage("distill", cfg)
    with pytest.raises(KeyError):
        train_stage("vocoder", cfg)


def test_tiny_run_artifacts(tiny_run):
    run = Run(tiny_run)
    for stage in ("kmeans", "ss-sc", "ss-cl", "diffuser", "distill"):
        assert run.artifact(stage).exists()
        recs = read_metrics(run.metrics(stage))
        assert recs and all(np.isfinite(r["smoothed"]) for r in recs)
    assert run.diffuser().name == "diffuser_s1a3.dsck"


def test_tokenize_rate_and_stream(tiny_run, tmp_path):
    wave = synth_dataset(99, 1, 1.0)[0]
    write_wav(tmp_path / "in.wav", wave)
    stream = tokenize_cmd(tmp_path / "in.wav", tmp_path / "x.dstk", tiny_run, n_s=1, n_a=3)
    assert stream.num_frames == 13
    assert (tmp_path / "x.dstk").stat().st_size == bitstream.file_size(13, ConditioningSpec(1, 3))
    sem, ac, spec = bitstream.read(tmp_path / "x.dstk")
    assert len(sem) == len(ac) == 13 and spec == ConditioningSpec(1, 3)
    with pytest.raises(ValueError):
        tokenize_wave(wave, tiny_run, 1, 0)


def test_tokenize_rejects_unreadable_audio(tiny_run, tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"junk")
    with pytest.raises(WorkflowError):
        tokenize_cmd(tmp_path / "bad.wav", tmp_path / "x.dstk", tiny_run)


def test_gan_and_diffusion_lengths_match(tiny_run):
    wave = synth_dataset(5, 1, 0.9)[0]
    sem, ac, spec = tokenize_wave(wave, tiny_run, 1, 3)
    gan = decode_tokens(sem, ac, spec, tiny_run, "gan")
    diff = decode_tokens(sem, ac, spec, tiny_run, "diffusion", steps=4)
    assert len(gan.wave) == len(diff.wave) == len(ac) * 1920
    assert gan.evaluations == 0 and diff.evaluations == 4


def test_distilled_decoder_uses_four_evaluations(tiny_run):
    sem, ac, spec = tokenize_wave(synth_dataset(6, 1, 0.5)[0], tiny_run, 1, 3)
    assert decode_tokens(sem, ac, spec, tiny_run, "distilled").evaluations == 4


def test_spec_mismatch_is_reported(tiny_run):
    sem, ac, spec = tokenize_wave(synth_dataset(6, 1, 0.5)[0], tiny_run, 1, 5)
    with pytest.raises(SpecMismatch, match=r"n_a=5.*n_a=3"):
        decode_tokens(sem, ac, spec, tiny_run, "diffusion", steps=2)


def test_decode_rejects_corrupt_stream(tiny_run, tmp_path):
    (tmp_path / "bad.dstk").write_bytes(b"DSTK\x01")
    with pytest.raises(WorkflowError):
        decode_cmd(tmp_path / "bad.dstk", tmp_path / "o.wav", tiny_run)


def test_decoding_is_deterministic(tiny_run, tmp_path):
    write_wav(tmp_path / "in.wav", synth_dataset(7, 1, 0.5)[0])
    tokenize_cmd(tmp_path / "in.wav", tmp_path / "x.dstk", tiny_run, n_a=3)
    a = decode_cmd(tmp_path / "x.dstk", tmp_path / "a.wav", tiny_run, "diffusion", steps=3, seed=1).wave
    b = decode_cmd(tmp_path / "x.dstk", tmp_path / "b.wav", tiny_run, "diffusion", steps=3, seed=1).wave
    c = decode_cmd(tmp_path / "x.dstk", tmp_path / "c.wav", tiny_run, "diffusion", steps=3, seed=2).wave
    assert np.array_equal(a.samples, b.samples) and not np.array_equal(a.samples, c.samples)


def test_training_is_deterministic(tiny_run, tmp_path):
    cfg = tiny_config(tmp_path / "again")
    corpus = Corpus(cfg)
    for stage in ("kmeans", "ss-sc", "ss-cl", "diffuser", "distill"):
        train_stage(stage, cfg, corpus)
        assert read_metrics(Run(cfg).metrics(stage)) == read_metrics(Run(tiny_run).metrics(stage))


STEP_KEY = {"ss-sc": "ss_sc_train", "ss-cl": "ss_cl_train", "diffuser": "diffuser_train", "distill": "distill"}


class Crash(Exception):
    pass


@pytest.mark.parametrize("stage", ["ss-sc", "ss-cl", "diffuser", "distill"])
def test_resume_after_interruption_replays_the_same_steps(tiny_run, tmp_path, monkeypatch, stage):
    steps = {f"{STEP_KEY[stage]}.steps": 5}
    full = clone(tiny_run, tmp_path / "full", drop=[stage], **steps)
    train_stage(stage, full)

    part = clone(tiny_run, tmp_path / "part", drop=[stage], **steps)
    real_save = stages.checkpoint.save

    def save_then_crash(*args, **kwargs):
        real_save(*args, **kwargs)
        raise Crash

    monkeypatch.setattr(stages.checkpoint, "save", save_then_crash)
    with pytest.raises(Crash):
        train_stage(stage, part)
    monkeypatch.setattr(stages.checkpoint, "save", real_save)
    train_stage(stage, part)

    a, b = read_metrics(Run(full).metrics(stage)), read_metrics(Run(part).metrics(stage))
    assert [r["step"] for r in b] == sorted({r["step"] for r in b})
    assert len(a) > 3 and a == b


def test_loss_drop():
    recs = [{"x": 10.0}] * 10 + [{"x": 5.0}] * 10
    assert loss_drop(recs, "x") == pytest.approx(0.5)
    with pytest.raises(ValueError):
        loss_drop(recs[:1], "x")

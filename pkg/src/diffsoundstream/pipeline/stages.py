"""Training stages: kmeans, ss-sc, ss-cl, diffuser, distill.

Every stage resumes from its checkpoint in the run directory. Per-step noise
comes from ``step_generator(seed, step)`` so a resumed run replays the same
batches and noise as an uninterrupted one.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from pathlib import Path

import numpy as np
import torch

from .. import checkpoint
from ..codec.api import ss_cl_encode, ss_sc_tokenize
from ..codec.losses import MultiScaleStftDiscriminator
from ..codec.models import LatentStats, SsCl, SsSc, latent_normalize
from ..codec.train import GanConfig, GanTrainer
from ..diffuser import Diffuser, TokenCond, diffusion_loss
from ..audio import Waveform
from ..quant import save_codebook, vq_encode_batch
from ..sampling import (
    DistillConfig,
    DistillState,
    SamplerConfig,
    ddpm_sample,
    distill_moment_matching,
    init_from_teacher,
    make_distill_optimizers,
    step_generator,
    student_sample,
)
from ..sched import Schedule
from ..semantics import fit_semantic_codebook, pool_features, semantic_tokenize
from ..tokens import SAMPLES_PER_TOKEN_FRAME, ConditioningSpec, SemanticTokenSeq
from .artifacts import (
    Run,
    load_codebook_artifact,
    load_corpus,
    load_diffuser,
    load_ss_cl,
    load_ss_sc,
    make_provider,
    train_spec,
)
from .config import RunConfig

log = logging.getLogger(__name__)

PRIMARY_METRIC = {"kmeans": "distortion", "ss-sc": "rec", "ss-cl": "rec", "diffuser": "loss", "distill": "moment_gap"}
SMOOTHING = 0.9


class MetricsLog:
    """Line-delimited JSON metrics with an exponentially smoothed primary loss.

    Opening at ``start`` drops records at or past that step, so entries written
    after the last checkpoint of an interrupted run do not repeat.
    """

    def __init__(self, path: Path, key: str, start: int = 0):
        self.path, self.key = Path(path), key
        kept = [r for r in read_metrics(self.path) if r["step"] < start] if start else []
        self.smoothed = kept[-1]["smoothed"] if kept else None
        self.path.write_text("".join(json.dumps(r) + "\n" for r in kept))

    def write(self, step: int, lr: float, values: dict) -> dict:
        x = values[self.key]
        self.smoothed = x if self.smoothed is None else SMOOTHING * self.smoothed + (1 - SMOOTHING) * x
        rec = {"step": step, "lr": lr, **values, "smoothed": self.smoothed}
        with self.path.open("a") as fh:
            fh.write(json.dumps(rec) + "\n")
        return rec


def read_metrics(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def loss_drop(records: list[dict], key: str) -> float:
    """Relative drop of ``key`` between the first and last tenth of the log."""
    vals = [r[key] for r in records]
    if len(vals) < 2:
        raise ValueError("need at least two metric records")
    w = max(1, len(vals) // 10)
    first, last = float(np.mean(vals[:w])), float(np.mean(vals[-w:]))
    return 1.0 - last / first


def cosine_lr(step: int, total: int, start: float, end: float) -> float:
    frac = min(step / max(total - 1, 1), 1.0)
    return end + 0.5 * (start - end) * (1 + math.cos(math.pi * frac))


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


def _seed_all(cfg: RunConfig, tag: int = 0):
    torch.manual_seed(cfg.seed * 7919 + tag)
    if cfg.strict_determinism:
        torch.use_deterministic_algorithms(True)


def _meta(cfg: RunConfig, stage: str, step: int, **extra) -> dict:
    return {"stage": stage, "step": step, "seed": cfg.seed, "config": cfg.to_dict(), **extra}


# --- data ------------------------------------------------------------------


def _pad_frames(samples: np.ndarray, min_frames: int) -> np.ndarray:
    frames = max(math.ceil(len(samples) / SAMPLES_PER_TOKEN_FRAME), min_frames)
    out = np.zeros(frames * SAMPLES_PER_TOKEN_FRAME, dtype=np.float32)
    out[: len(samples)] = samples
    return out


class Corpus:
    """Clips zero-padded to whole token frames, with cached per-clip tokens."""

    def __init__(self, cfg: RunConfig, waves: list[Waveform] | None = None):
        self.cfg = cfg
        waves = waves if waves is not None else load_corpus(cfg)
        self.clips = [_pad_frames(w.samples, cfg.data.crop_frames) for w in waves]
        self.frames = [len(c) // SAMPLES_PER_TOKEN_FRAME for c in self.clips]
        self.sem: list[np.ndarray] | None = None

    def waves(self) -> list[Waveform]:
        return [Waveform(c) for c in self.clips]

    def attach_semantic(self, provider, cb) -> None:
        self.sem = [semantic_tokenize(w, provider, cb).ids for w in self.waves()]
        for ids, f in zip(self.sem, self.frames):
            if len(ids) != f:
                raise ValueError(f"feature provider yields {len(ids)} semantic frames for a {f}-frame clip")

    def crops(self, gen: torch.Generator, batch: int | None = None) -> list[tuple[int, int]]:
        """``(clip, first_frame)`` pairs for one batch."""
        batch = batch or self.cfg.data.batch_size
        crop = self.cfg.data.crop_frames
        idx = torch.randint(0, len(self.clips), (batch,), generator=gen).tolist()
        return [(i, int(torch.randint(0, self.frames[i] - crop + 1, (1,), generator=gen))) for i in idx]

    def audio_batch(self, picks) -> tuple[torch.Tensor, torch.Tensor | None]:
        n = self.cfg.data.crop_frames
        hop = SAMPLES_PER_TOKEN_FRAME
        wave = torch.as_tensor(np.stack([self.clips[i][f * hop : (f + n) * hop] for i, f in picks]))
        sem = None
        if self.sem is not None:
            sem = torch.as_tensor(np.stack([self.sem[i][f : f + n] for i, f in picks]))
        return wave, sem

    @property
    def epoch_steps(self) -> int:
        return max(1, math.ceil(len(self.clips) / self.cfg.data.batch_size))


# --- stages ----------------------------------------------------------------


def train_kmeans(cfg: RunConfig, corpus: Corpus | None = None) -> Path:
    run = Run(cfg).ensure()
    run.check_prerequisites("kmeans")
    corpus = corpus or Corpus(cfg)
    provider = make_provider(cfg.semantic)
    cb = fit_semantic_codebook(corpus.waves(), provider, cfg.semantic.vocab, seed=cfg.semantic.kmeans_seed)
    save_codebook(cb, run.codebook())
    pooled = np.concatenate([pool_features(provider.features(w)) for w in corpus.waves()])
    ids = vq_encode_batch(pooled, cb)
    distortion = float(((pooled - cb.entries[ids]) ** 2).sum(1).mean())
    MetricsLog(run.metrics("kmeans"), "distortion").write(
        0, 0.0, {"distortion": distortion, "codes_used": int(len(np.unique(ids))), "vocab": cb.size}
    )
    return run.codebook()


def _train_gan(cfg: RunConfig, stage: str, model, tcfg, corpus: Corpus, path: Path, extra_meta=None) -> dict:
    run = Run(cfg)
    disc = MultiScaleStftDiscriminator(channels=tcfg.disc_channels)
    gcfg = GanConfig(
        lr=tcfg.lr, adv_start=tcfg.adv_start, adv_weight=tcfg.adv_weight, feat_weight=tcfg.feat_weight, rec_weight=tcfg.rec_weight
    )
    trainer = GanTrainer(model, disc, gcfg)
    modules, optims = {"model": model, "disc": disc}, {"g": trainer.opt_g, "d": trainer.opt_d}
    start = 0
    if path.exists():
        start = checkpoint.restore(path, modules, optims)["step"]
        trainer.step_count = start
        log.info("%s: resuming at step %d", stage, start)
    metrics = MetricsLog(run.metrics(stage), PRIMARY_METRIC[stage], start)
    last = {}
    for step in range(start, tcfg.steps):
        gen = step_generator(cfg.seed, step)
        wave, sem = corpus.audio_batch(corpus.crops(gen))
        losses = trainer.step(wave, sem if isinstance(model, SsSc) and model.cfg.semantic else None, gen)
        if isinstance(model, SsSc) and (step + 1) % corpus.epoch_steps == 0:
            res = trainer.last_residuals
            for level, cb in enumerate(model.rvq.levels):
                samples = res[level] if level < len(res) and len(res[level]) else res[0]
                cb.end_epoch(samples, gen)
        if cfg.log_every and step % cfg.log_every == 0:
            last = metrics.write(step, tcfg.lr, losses)
        if (step + 1) % cfg.ckpt_every == 0 or step + 1 == tcfg.steps:
            checkpoint.save(path, modules, _meta(cfg, stage, step + 1, model_config=model.cfg.to_dict(), **(extra_meta or {})), optims)
    return last


def train_ss_sc(cfg: RunConfig, corpus: Corpus | None = None) -> Path:
    run = Run(cfg).ensure()
    run.check_prerequisites("ss-sc")
    _seed_all(cfg, 1)
    corpus = corpus or Corpus(cfg)
    if cfg.ss_sc.semantic:
        corpus.attach_semantic(make_provider(cfg.semantic), load_codebook_artifact(run))
    model = SsSc(cfg.ss_sc)
    _train_gan(cfg, "ss-sc", model, cfg.ss_sc_train, corpus, run.ss_sc())
    return run.ss_sc()


def train_ss_cl(cfg: RunConfig, corpus: Corpus | None = None) -> Path:
    run = Run(cfg).ensure()
    run.check_prerequisites("ss-cl")
    _seed_all(cfg, 2)
    corpus = corpus or Corpus(cfg)
    model = SsCl(cfg.ss_cl)
    path = run.ss_cl()
    _train_gan(cfg, "ss-cl", model, cfg.ss_cl_train, corpus, path)
    # statistics over the whole corpus, inference mode (no noise)
    stats = LatentStats.from_latents([ss_cl_encode(model, w) for w in corpus.waves()])
    arrays, meta = checkpoint.read_archive(path)
    meta["latent_stats"] = stats.to_dict()
    checkpoint.write_archive(path, arrays, meta)
    return path


class LatentCorpus:
    """Token and normalized-latent caches for diffuser and distillation batches."""

    def __init__(self, cfg: RunConfig, corpus: Corpus, spec: ConditioningSpec):
        run = Run(cfg)
        self.cfg, self.spec = cfg, spec
        provider = make_provider(cfg.semantic)
        corpus.attach_semantic(provider, load_codebook_artifact(run))
        ss_sc, _ = load_ss_sc(run, True)
        ss_cl, self.stats, _ = load_ss_cl(run)
        stack = ss_sc.rvq.to_stack()
        self.corpus = corpus
        self.sem, self.ac, self.lat = [], [], []
        for wave, sem in zip(corpus.waves(), corpus.sem):
            seq = SemanticTokenSeq(sem, vocab_size=max(2048, cfg.semantic.vocab))
            self.sem.append(sem)
            self.ac.append(ss_sc_tokenize(ss_sc, wave, seq, spec.n_a, stack).ids)
            self.lat.append(latent_normalize(ss_cl_encode(ss_cl, wave), self.stats).astype(np.float32))

    def batch(self, picks) -> tuple[torch.Tensor, TokenCond]:
        n = self.cfg.data.crop_frames
        x = torch.as_tensor(np.stack([self.lat[i][4 * f : 4 * (f + n)] for i, f in picks]))
        ac = torch.as_tensor(np.stack([self.ac[i][f : f + n] for i, f in picks]))
        sem = torch.as_tensor(np.stack([self.sem[i][f : f + n] for i, f in picks])) if self.spec.n_s else None
        return x, TokenCond(sem, ac, x.shape[1])

    def stream(self, seed: int, start: int, batch: int | None = None):
        step = start
        while True:
            yield self.batch(self.corpus.crops(step_generator(seed + 1, step), batch))
            step += 1


def _diffuser_cfg(cfg: RunConfig):
    return dataclasses.replace(cfg.diffuser, io_dim=cfg.ss_cl.latent_dim)


def train_diffuser(cfg: RunConfig, corpus: Corpus | None = None) -> Path:
    run = Run(cfg).ensure()
    run.check_prerequisites("diffuser")
    _seed_all(cfg, 3)
    spec = train_spec(cfg)
    data = LatentCorpus(cfg, corpus or Corpus(cfg), spec)
    dcfg = _diffuser_cfg(cfg)
    model = Diffuser(dcfg, spec)
    tc = cfg.diffuser_train
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr_start)
    path = run.diffuser(spec)
    start = 0
    if path.exists():
        start = checkpoint.restore(path, {"model": model}, {"adam": opt})["step"]
    metrics = MetricsLog(run.metrics("diffuser"), "loss", start)
    sched = Schedule()
    stream = data.stream(cfg.seed, start, tc.batch_size)
    model.train()
    for step in range(start, tc.steps):
        lr = cosine_lr(step, tc.steps, tc.lr_start, tc.lr_end)
        _set_lr(opt, lr)
        x, cond = next(stream)
        loss = diffusion_loss(model, x, cond, sched, step_generator(cfg.seed, step))
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        if cfg.log_every and step % cfg.log_every == 0:
            metrics.write(step, lr, {"loss": float(loss.detach())})
        if (step + 1) % cfg.ckpt_every == 0 or step + 1 == tc.steps:
            meta = _meta(cfg, "diffuser", step + 1, model_config=dcfg.to_dict(), n_s=spec.n_s, n_a=spec.n_a,
                         latent_stats=data.stats.to_dict())
            checkpoint.save(path, {"model": model}, meta, {"adam": opt})
    return path


def probe_gap(student, reference: torch.Tensor, cond: TokenCond, seed: int) -> float:
    """Squared gap between student and reference per-dimension mean and std."""
    with torch.no_grad():
        got = student_sample(student, cond, torch.Generator().manual_seed(seed))
    flat_s = got.reshape(-1, got.shape[-1])
    flat_r = reference.reshape(-1, reference.shape[-1])
    return float(((flat_s.mean(0) - flat_r.mean(0)) ** 2).mean() + ((flat_s.std(0) - flat_r.std(0)) ** 2).mean())


def _probe(data: LatentCorpus, cfg: RunConfig, teacher) -> tuple[torch.Tensor, TokenCond]:
    """Fixed probe conditions and the teacher's full-step samples for them."""
    picks = data.corpus.crops(torch.Generator().manual_seed(cfg.seed + 99), cfg.distill.probe_batch)
    _, cond = data.batch(picks)
    reps = 16
    cond = TokenCond(
        None if cond.sem is None else cond.sem.repeat(reps, 1), cond.ac.repeat(reps, 1, 1), cond.latent_len
    )
    with torch.no_grad():
        ref = ddpm_sample(teacher, cond, Schedule(), SamplerConfig(cfg.sampling.num_steps, cfg.sampling.variance_mode),
                          torch.Generator().manual_seed(cfg.seed + 7))
    return ref, cond


def train_distill(cfg: RunConfig, corpus: Corpus | None = None) -> Path:
    run = Run(cfg).ensure()
    run.check_prerequisites("distill")
    _seed_all(cfg, 4)
    spec = train_spec(cfg)
    teacher, _ = load_diffuser(run, spec)
    student, aux = init_from_teacher(teacher)
    dc = cfg.distill
    dcfg = DistillConfig(lr=dc.lr, aux_lr=dc.aux_lr, adam_beta1=dc.adam_beta1, seed=cfg.seed,
                         finetune_steps=dc.steps, student_weight=dc.student_weight)
    optims = make_distill_optimizers(aux, student, dcfg)
    path = run.student(spec)
    modules = {"model": student, "aux": aux}
    state = DistillState()
    if path.exists():
        state.step = checkpoint.restore(path, modules, {"aux": optims[0], "student": optims[1]})["step"]
    data = LatentCorpus(cfg, corpus or Corpus(cfg), spec)
    ref, probe_cond = _probe(data, cfg, teacher)
    # distill records are taken after ``step`` updates, so the checkpoint's own step is kept
    metrics = MetricsLog(run.metrics("distill"), "moment_gap", state.step + 1 if state.step else 0)
    sched = Schedule()
    stream = data.stream(cfg.seed, state.step, dc.batch_size)
    saved = state.step
    if state.step == 0:
        metrics.write(0, dc.lr, {"moment_gap": probe_gap(student, ref, probe_cond, cfg.seed), "aux_loss": None})
    while state.step < dc.steps:
        stop = min(dc.steps, (state.step // dc.probe_every + 1) * dc.probe_every)
        distill_moment_matching(teacher, aux, student, stream, dataclasses.replace(dcfg, finetune_steps=stop), sched, state, optims)
        gap = probe_gap(student, ref, probe_cond, cfg.seed)
        metrics.write(state.step, dc.lr, {"moment_gap": gap, "aux_loss": state.aux_losses[-1]})
        if state.step - saved >= cfg.ckpt_every or state.step == dc.steps:
            saved = state.step
            meta = _meta(cfg, "distill", state.step, model_config=teacher.cfg.to_dict(), n_s=spec.n_s, n_a=spec.n_a,
                         student_steps=dcfg.student_steps)
            checkpoint.save(path, modules, meta, {"aux": optims[0], "student": optims[1]})
    return path


TRAINERS = {
    "kmeans": train_kmeans,
    "ss-sc": train_ss_sc,
    "ss-cl": train_ss_cl,
    "diffuser": train_diffuser,
    "distill": train_distill,
}


def train_stage(stage: str, cfg: RunConfig, corpus: Corpus | None = None) -> Path:
    if stage not in TRAINERS:
        raise KeyError(f"unknown stage {stage!r}; choose from {', '.join(TRAINERS)}")
    return TRAINERS[stage](cfg, corpus)

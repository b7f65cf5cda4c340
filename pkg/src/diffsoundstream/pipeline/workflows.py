"""Audio to ``.dstk`` and back, using the checkpoints of one run directory."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .. import bitstream
from ..audio import Waveform, load_waveform, write_wav
from ..codec.api import ss_cl_decode, ss_sc_decode, ss_sc_tokenize
from ..codec.models import latent_denormalize
from ..diffuser import TokenCond
from ..sampling import SamplerConfig, ddpm_sample, student_sample
from ..sched import Schedule
from ..semantics import semantic_tokenize
from ..tokens import AcousticTokenSeq, ConditioningSpec, SemanticTokenSeq
from .artifacts import Run, load_codebook_artifact, load_diffuser, load_ss_cl, load_ss_sc, make_provider
from .config import RunConfig

DECODERS = ("gan", "diffusion", "distilled")


class WorkflowError(RuntimeError):
    pass


def tokenize_wave(
    wave: Waveform, cfg: RunConfig, n_s: int, n_a: int, codec: str = "ss-sc"
) -> tuple[SemanticTokenSeq | None, AcousticTokenSeq, ConditioningSpec]:
    spec = ConditioningSpec(n_s, n_a)
    run = Run(cfg)
    if codec == "baseline":
        if n_s:
            raise WorkflowError("the baseline codec has no semantic tokens; use n_s=0")
        model, _ = load_ss_sc(run, semantic=False)
        return None, ss_sc_tokenize(model, wave, None, n_a), spec
    if codec != "ss-sc":
        raise WorkflowError(f"unknown codec {codec!r} (expected 'ss-sc' or 'baseline')")
    model, _ = load_ss_sc(run, semantic=True)
    sem = semantic_tokenize(wave, make_provider(cfg.semantic), load_codebook_artifact(run))
    ac = ss_sc_tokenize(model, wave, sem, n_a)
    return (sem if n_s else None), ac, spec


def tokenize_cmd(wav_in, out, cfg: RunConfig, n_s: int = 1, n_a: int = 8, codec: str = "ss-sc") -> bitstream.TokenBitstream:
    """Semantic tokens, then SS-SC acoustic tokens truncated to ``n_a``, packed to ``out``."""
    try:
        wave = load_waveform(wav_in)
    except Exception as exc:
        raise WorkflowError(f"{wav_in}: cannot read audio ({exc})") from exc
    sem, ac, spec = tokenize_wave(wave, cfg, n_s, n_a, codec)
    stream = bitstream.pack(sem, ac, spec)
    stream.write(out)
    return stream


@dataclass
class DecodeResult:
    wave: Waveform
    decoder: str
    evaluations: int  # diffuser forward passes (0 for the GAN path)


def decode_tokens(
    sem: SemanticTokenSeq | None,
    ac: AcousticTokenSeq,
    spec: ConditioningSpec,
    cfg: RunConfig,
    decoder: str | None = None,
    steps: int | None = None,
    seed: int = 0,
    codec: str = "ss-sc",
) -> DecodeResult:
    decoder = decoder or cfg.decoder
    run = Run(cfg)
    if decoder == "gan":
        model, _ = load_ss_sc(run, semantic=codec != "baseline")
        if model.cfg.semantic and sem is None:
            raise WorkflowError("GAN decoding with the semantic-conditioned codec needs a stream with n_s=1")
        return DecodeResult(ss_sc_decode(model, ac, sem if model.cfg.semantic else None), decoder, 0)
    if decoder not in DECODERS:
        raise WorkflowError(f"unknown decoder {decoder!r}; choose from {', '.join(DECODERS)}")

    model, _ = load_diffuser(run, spec, student=decoder == "distilled")
    ss_cl, stats, _ = load_ss_cl(run)
    sem_t = None if sem is None else torch.as_tensor(sem.ids)[None]
    cond = TokenCond(sem_t, torch.as_tensor(ac.ids)[None])
    gen = torch.Generator().manual_seed(seed)
    before = model.calls
    with torch.no_grad():
        if decoder == "distilled":
            lat = student_sample(model, cond, gen, Schedule(), variance_mode=cfg.sampling.variance_mode)
        else:
            scfg = SamplerConfig(steps or cfg.sampling.num_steps, cfg.sampling.variance_mode, seed)
            lat = ddpm_sample(model, cond, Schedule(), scfg, gen)
    lat = latent_denormalize(lat[0].double().numpy(), stats)
    return DecodeResult(ss_cl_decode(ss_cl, lat.astype(np.float32)), decoder, model.calls - before)


def decode_cmd(dstk_in, wav_out, cfg: RunConfig, decoder: str | None = None, steps: int | None = None, seed: int = 0,
               codec: str = "ss-sc") -> DecodeResult:
    try:
        sem, ac, spec = bitstream.unpack(Path(dstk_in).read_bytes())
    except bitstream.BitstreamError as exc:
        raise WorkflowError(f"{dstk_in}: {exc}") from exc
    result = decode_tokens(sem, ac, spec, cfg, decoder, steps, seed, codec)
    write_wav(wav_out, result.wave)
    return result

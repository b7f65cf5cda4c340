"""Run configuration: nested dataclasses, YAML files and dotted overrides.

Two profiles ship. ``full`` records the full-scale values (widths, learning
rates, step counts); ``desk`` shrinks widths and budgets so every stage runs
on a laptop CPU. Tests and smoke runs use ``desk``.
"""

from __future__ import annotations

import copy
import json
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..codec.models import SsClConfig, SsScConfig
from ..diffuser import DiffuserConfig


@dataclass
class DataConfig:
    source: str | None = None  # directory or manifest; None -> synthetic corpus
    synth_clips: int = 16
    synth_seconds: float = 1.0
    synth_seed: int = 1234
    crop_frames: int = 4  # training crops, in 12.5 Hz token frames
    batch_size: int = 4


@dataclass
class SemanticConfig:
    provider: str = "logmel"  # or "file"
    feature_dir: str | None = None
    n_mels: int = 64
    vocab: int = 2048
    kmeans_seed: int = 0


@dataclass
class GanStageConfig:
    lr: float = 1e-4
    steps: int = 1_000_000
    adv_start: int = 0
    disc_channels: int = 32
    adv_weight: float = 1.0
    feat_weight: float = 100.0
    rec_weight: float = 1.0


@dataclass
class DiffuserStageConfig:
    lr_start: float = 3e-4
    lr_end: float = 1e-5
    steps: int = 4_000_000
    n_s: int = 1
    n_a: int = 3
    batch_size: int | None = None  # None -> data.batch_size


@dataclass
class DistillStageConfig:
    lr: float = 1e-6
    aux_lr: float | None = None
    adam_beta1: float = 0.0
    steps: int = 150_000
    student_weight: str = "none"
    probe_every: int = 50
    probe_batch: int = 4
    batch_size: int | None = None


@dataclass
class SamplingConfig:
    num_steps: int = 100
    variance_mode: str = "small"


@dataclass
class RunConfig:
    profile: str = "full"
    seed: int = 0
    workdir: str = "runs/default"
    decoder: str = "diffusion"  # gan | diffusion | distilled
    ckpt_every: int = 1000
    log_every: int = 1
    strict_determinism: bool = False
    data: DataConfig = field(default_factory=DataConfig)
    semantic: SemanticConfig = field(default_factory=SemanticConfig)
    ss_sc: SsScConfig = field(default_factory=SsScConfig)
    ss_sc_train: GanStageConfig = field(default_factory=GanStageConfig)
    ss_cl: SsClConfig = field(default_factory=SsClConfig)
    ss_cl_train: GanStageConfig = field(default_factory=GanStageConfig)
    diffuser: DiffuserConfig = field(default_factory=DiffuserConfig)
    diffuser_train: DiffuserStageConfig = field(default_factory=DiffuserStageConfig)
    distill: DistillStageConfig = field(default_factory=DistillStageConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def to_dict(self) -> dict:
        # JSON round trip turns tuples into lists so YAML can dump them
        return json.loads(json.dumps(dataclasses.asdict(self)))


FULL = RunConfig()

DESK_OVERRIDES = {
    "profile": "desk",
    "ckpt_every": 100,
    "data.crop_frames": 4,
    "data.batch_size": 4,
    "semantic.vocab": 32,
    "ss_sc.base_channels": 4,
    "ss_sc.latent_dim": 16,
    "ss_sc.codebook_size": 256,
    "ss_sc.film_embed_dim": 16,
    "ss_sc.semantic_vocab": 32,
    "ss_sc.dilations": [1, 3],
    "ss_sc_train.lr": 3e-3,
    "ss_sc_train.steps": 500,
    "ss_sc_train.adv_start": 250,
    "ss_sc_train.disc_channels": 4,
    "ss_cl.base_channels": 4,
    "ss_cl.dilations": [1, 3],
    "ss_cl_train.lr": 3e-3,
    "ss_cl_train.steps": 500,
    "ss_cl_train.adv_start": 250,
    "ss_cl_train.disc_channels": 4,
    "diffuser.channels": 64,
    "diffuser.blocks": 2,
    "diffuser.embed_dim": 32,
    "diffuser.time_features": 32,
    "diffuser_train.lr_start": 3e-3,
    "diffuser_train.lr_end": 1e-4,
    "diffuser_train.steps": 1000,
    "diffuser_train.batch_size": 32,
    "distill.lr": 3e-5,
    "distill.aux_lr": 1e-3,
    "distill.steps": 200,
    "distill.batch_size": 32,
    "distill.probe_every": 20,
    "sampling.num_steps": 100,
}


def _parse_scalar(text: str):
    value = yaml.safe_load(text)
    if isinstance(value, str):
        # YAML 1.1 reads "1e-3" as a string
        for cast in (int, float):
            try:
                return cast(value)
            except ValueError:
                pass
    return value


def _coerce(value, current):
    if isinstance(value, str) and not isinstance(current, str):
        value = _parse_scalar(value)
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Return a copy with ``{"a.b": value}`` overrides applied (strings parsed as YAML)."""
    cfg = copy.deepcopy(cfg)
    for dotted, value in overrides.items():
        target = cfg
        *parents, leaf = dotted.split(".")
        for name in parents:
            if not hasattr(target, name):
                raise KeyError(f"unknown config section {dotted!r}")
            target = getattr(target, name)
        if not hasattr(target, leaf):
            raise KeyError(f"unknown config key {dotted!r}")
        setattr(target, leaf, _coerce(value, getattr(target, leaf)))
        if dataclasses.is_dataclass(target) and hasattr(target, "__post_init__"):
            target.__post_init__()
    return cfg


def profile(name: str) -> RunConfig:
    if name == "full":
        return copy.deepcopy(FULL)
    if name == "desk":
        return apply_overrides(FULL, DESK_OVERRIDES)
    raise KeyError(f"unknown profile {name!r} (expected 'full' or 'desk')")


def _flatten(d: dict, prefix="") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config(path=None, overrides: dict | None = None, base: str | None = None) -> RunConfig:
    """Profile defaults, then the YAML file, then explicit overrides."""
    data = yaml.safe_load(Path(path).read_text()) if path else {}
    data = data or {}
    cfg = profile(base or data.get("profile", "desk"))
    file_overrides = {k: v for k, v in _flatten(data).items() if k != "profile"}
    cfg = apply_overrides(cfg, file_overrides)
    return apply_overrides(cfg, overrides or {})


def from_dict(d: dict) -> RunConfig:
    return load_config(None, {k: v for k, v in _flatten(d).items() if k != "profile"}, base=d.get("profile", "desk"))


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))

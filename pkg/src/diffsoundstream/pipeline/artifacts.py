"""Run directory layout, prerequisite checks and checkpoint loaders."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..audio import Waveform, ingest, synth_dataset
from ..codec.models import LatentStats, SsCl, SsClConfig, SsSc, SsScConfig
from ..diffuser import Diffuser, DiffuserConfig
from ..quant import Codebook, load_codebook
from ..semantics import FileFeatureProvider, LogMelProvider
from ..tokens import ConditioningSpec
from .config import RunConfig, SemanticConfig

STAGES = ("kmeans", "ss-sc", "ss-cl", "diffuser", "distill")
REQUIRES = {
    "kmeans": (),
    "ss-sc": ("kmeans",),
    "ss-cl": ("kmeans", "ss-sc"),
    "diffuser": ("kmeans", "ss-sc", "ss-cl"),
    "distill": ("kmeans", "ss-sc", "ss-cl", "diffuser"),
}


class MissingPrerequisite(RuntimeError):
    def __init__(self, stage: str, prereq: str, path: Path):
        self.stage, self.prereq, self.path = stage, prereq, path
        super().__init__(f"stage '{stage}' needs the '{prereq}' stage first: {path} does not exist")


class SpecMismatch(ValueError):
    pass


def spec_tag(spec: ConditioningSpec) -> str:
    return f"s{spec.n_s}a{spec.n_a}"


def train_spec(cfg: RunConfig) -> ConditioningSpec:
    return ConditioningSpec(cfg.diffuser_train.n_s, cfg.diffuser_train.n_a)


class Run:
    """Paths of every artifact a run directory can hold."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = Path(cfg.workdir)

    def ensure(self) -> "Run":
        self.root.mkdir(parents=True, exist_ok=True)
        return self

    def codebook(self) -> Path:
        return self.root / "semantic_codebook.dscb"

    def ss_sc(self, semantic: bool | None = None) -> Path:
        semantic = self.cfg.ss_sc.semantic if semantic is None else semantic
        return self.root / ("ss_sc.dsck" if semantic else "ss_baseline.dsck")

    def ss_cl(self) -> Path:
        return self.root / "ss_cl.dsck"

    def diffuser(self, spec: ConditioningSpec | None = None) -> Path:
        return self.root / f"diffuser_{spec_tag(spec or train_spec(self.cfg))}.dsck"

    def student(self, spec: ConditioningSpec | None = None) -> Path:
        return self.root / f"student_{spec_tag(spec or train_spec(self.cfg))}.dsck"

    def artifact(self, stage: str) -> Path:
        return {
            "kmeans": self.codebook,
            "ss-sc": self.ss_sc,
            "ss-cl": self.ss_cl,
            "diffuser": self.diffuser,
            "distill": self.student,
        }[stage]()

    def metrics(self, stage: str) -> Path:
        return self.root / f"metrics_{stage}.jsonl"

    def check_prerequisites(self, stage: str) -> None:
        if stage not in REQUIRES:
            raise KeyError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
        for prereq in REQUIRES[stage]:
            # downstream stages consume the semantic-conditioned codec's tokens
            path = self.ss_sc(True) if prereq == "ss-sc" else self.artifact(prereq)
            if not path.exists():
                raise MissingPrerequisite(stage, prereq, path)

    def diffuser_specs(self) -> list[ConditioningSpec]:
        out = []
        for p in sorted(self.root.glob("diffuser_s*a*.dsck")):
            tag = p.stem.split("_")[1]
            out.append(ConditioningSpec(int(tag[1]), int(tag[3:])))
        return out


def load_corpus(cfg: RunConfig) -> list[Waveform]:
    if cfg.data.source:
        waves, report = ingest(cfg.data.source)
        if not waves:
            raise RuntimeError(f"no usable clips under {cfg.data.source} ({len(report.errors)} errors)")
        return waves
    return synth_dataset(cfg.data.synth_seed, cfg.data.synth_clips, cfg.data.synth_seconds)


def make_provider(sem: SemanticConfig):
    if sem.provider == "logmel":
        return LogMelProvider(sem.n_mels)
    if sem.provider == "file":
        if not sem.feature_dir:
            raise ValueError("semantic.provider=file needs semantic.feature_dir")
        return FileFeatureProvider(sem.feature_dir)
    raise ValueError(f"unknown feature provider {sem.provider!r} (expected 'logmel' or 'file')")


def _meta(path) -> dict:
    return checkpoint.read_archive(path)[1]


def _model_cfg(cls, d: dict):
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def load_codebook_artifact(run: Run) -> Codebook:
    path = run.codebook()
    if not path.exists():
        raise MissingPrerequisite("tokenize", "kmeans", path)
    return load_codebook(path)


def load_ss_sc(run: Run, semantic: bool | None = None) -> tuple[SsSc, dict]:
    path = run.ss_sc(semantic)
    if not path.exists():
        raise MissingPrerequisite("tokenize", "ss-sc", path)
    meta = _meta(path)
    model = SsSc(_model_cfg(SsScConfig, meta["model_config"]))
    checkpoint.restore(path, {"model": model})
    return model.eval(), meta


def load_ss_cl(run: Run) -> tuple[SsCl, LatentStats, dict]:
    path = run.ss_cl()
    if not path.exists():
        raise MissingPrerequisite("decode", "ss-cl", path)
    meta = _meta(path)
    model = SsCl(_model_cfg(SsClConfig, meta["model_config"]))
    checkpoint.restore(path, {"model": model})
    if "latent_stats" not in meta:
        raise RuntimeError(f"{path} has no latent statistics; the ss-cl stage did not finish")
    return model.eval(), LatentStats.from_dict(meta["latent_stats"]), meta


def load_diffuser(run: Run, spec: ConditioningSpec, student: bool = False) -> tuple[Diffuser, dict]:
    """Diffuser (or distilled student) trained for exactly ``spec``."""
    path = run.student(spec) if student else run.diffuser(spec)
    if not path.exists():
        available = run.diffuser_specs()
        if available and not student:
            names = ", ".join(f"(n_s={s.n_s}, n_a={s.n_a})" for s in available)
            raise SpecMismatch(
                f"stream spec (n_s={spec.n_s}, n_a={spec.n_a}) has no diffuser; checkpoints exist for {names}"
            )
        raise MissingPrerequisite("decode", "distill" if student else "diffuser", path)
    meta = _meta(path)
    ck_spec = ConditioningSpec(meta["n_s"], meta["n_a"])
    if ck_spec != spec:
        raise SpecMismatch(
            f"checkpoint spec (n_s={ck_spec.n_s}, n_a={ck_spec.n_a}) != stream spec (n_s={spec.n_s}, n_a={spec.n_a})"
        )
    model = Diffuser(_model_cfg(DiffuserConfig, meta["model_config"]), ck_spec)
    checkpoint.restore(path, {"model": model})
    return model.eval(), meta


def summarize(path) -> dict:
    """Metadata and tensor inventory of a checkpoint or codebook file."""
    path = Path(path)
    if path.suffix == ".dscb":
        cb = load_codebook(path)
        return {"kind": "codebook", "size": cb.size, "dim": cb.dim}
    arrays, meta = checkpoint.read_archive(path)
    meta = {k: v for k, v in meta.items() if k not in ("optim_scalars", "config")}
    params = sum(int(np.prod(a.shape)) for k, a in arrays.items() if k.startswith("model."))
    return {"kind": "checkpoint", "tensors": len(arrays), "model_parameters": params, **json.loads(json.dumps(meta))}

"""Quality versus token depth for each decoding system, with curve plots."""

from __future__ import annotations

import json
import logging
import math
import tempfile
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

from ..audio import Waveform, write_wav
from ..pipeline.artifacts import MissingPrerequisite, SpecMismatch
from ..pipeline.config import RunConfig
from ..pipeline.workflows import WorkflowError, decode_tokens, tokenize_wave
from .metrics import spectral_metrics
from .wer import wer_eval

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class System:
    name: str
    decoder: str  # gan | diffusion | distilled
    n_s: int
    codec: str = "ss-sc"


SYSTEMS = {
    s.name: s
    for s in (
        System("ss-baseline", "gan", 0, "baseline"),
        System("ss-sc", "gan", 1),
        System("diff-ss", "diffusion", 1),
        System("diff-ss-nosem", "diffusion", 0),
        System("diff-ss-distilled", "distilled", 1),
    )
}

METRICS = ("mel_distance", "lsd", "wer")


@dataclass
class Record:
    system: str
    decoder: str
    codec: str
    n_s: int
    n_a: int
    tokens_per_frame: int
    status: str = "ok"  # ok | missing | failed
    error: str | None = None
    mel_distance: float | None = None
    lsd: float | None = None
    wer: float | None = None
    wer_excluded: int = 0
    extra: dict = field(default_factory=dict)  # external scorer columns
    clips: list = field(default_factory=list)
    per_clip: list = field(default_factory=list)
    seed: int = 0
    steps: int | None = None


@dataclass
class EvalReport:
    records: list[Record]
    metadata: dict
    warnings: list[str] = field(default_factory=list)

    def get(self, system: str, n_a: int) -> Record:
        for r in self.records:
            if r.system == system and r.n_a == n_a:
                return r
        raise KeyError((system, n_a))

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        lines = [json.dumps({"metadata": self.metadata, "warnings": self.warnings})]
        lines += [json.dumps(asdict(r)) for r in self.records]
        path.write_text("\n".join(lines) + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path) -> "EvalReport":
        head, *rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        return cls([Record(**r) for r in rows], head["metadata"], head.get("warnings", []))


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(sum(xs) / len(xs)) if xs else None


def depth_sweep(
    systems,
    depths,
    clips: dict[str, Waveform],
    cfg: RunConfig,
    steps: int | None = None,
    seed: int = 0,
    transcriber: str | None = None,
    references: dict | None = None,
    scorers: dict[str, Callable[[Waveform, Waveform], float]] | None = None,
) -> EvalReport:
    """Decode every clip with every ``(system, n_a)`` and score it against the input.

    A system whose checkpoint is absent (for instance no diffuser trained for
    that depth) yields a record with ``status="missing"`` rather than an error.
    """
    scorers = scorers or {}
    records = []
    for sys_name in systems:
        if sys_name not in SYSTEMS:
            raise KeyError(f"unknown system {sys_name!r}; choose from {', '.join(SYSTEMS)}")
        system = SYSTEMS[sys_name]
        for n_a in depths:
            rec = Record(system.name, system.decoder, system.codec, system.n_s, n_a, system.n_s + n_a,
                         clips=list(clips), seed=seed, steps=steps)
            try:
                _evaluate(rec, system, clips, cfg, steps, seed, transcriber, references, scorers)
            except (MissingPrerequisite, SpecMismatch) as exc:
                rec.status, rec.error = "missing", str(exc)
            except (WorkflowError, ValueError, RuntimeError) as exc:
                rec.status, rec.error = "failed", str(exc)
            records.append(rec)
    report = EvalReport(records, {"workdir": cfg.workdir, "seed": seed, "steps": steps, "clips": list(clips),
                                  "systems": list(systems), "depths": list(depths)})
    report.warnings = directional_checks(report)
    for w in report.warnings:
        warnings.warn(w)
    return report


def _evaluate(rec, system, clips, cfg, steps, seed, transcriber, references, scorers):
    decoded = {}
    for name, wave in clips.items():
        sem, ac, spec = tokenize_wave(wave, cfg, system.n_s, rec.n_a, system.codec)
        out = decode_tokens(sem, ac, spec, cfg, system.decoder, steps, seed, system.codec).wave
        mel, lsd = spectral_metrics(wave, out)
        row = {"clip": name, "mel_distance": mel, "lsd": lsd, "samples_in": len(wave), "samples_out": len(out)}
        row.update({k: float(f(wave, out)) for k, f in scorers.items()})
        rec.per_clip.append(row)
        decoded[name] = out
    rec.mel_distance = _mean(r["mel_distance"] for r in rec.per_clip)
    rec.lsd = _mean(r["lsd"] for r in rec.per_clip)
    rec.extra = {k: _mean(r[k] for r in rec.per_clip) for k in scorers}
    if transcriber:
        with tempfile.TemporaryDirectory() as tmp:
            paths = {}
            for name, out in decoded.items():
                paths[name] = Path(tmp) / f"{name}.wav"
                write_wav(paths[name], out)
            res = wer_eval(paths, transcriber, references or {})
        rec.wer, rec.wer_excluded = res.wer, res.excluded


def directional_checks(report: EvalReport, depth: int = 2) -> list[str]:
    """Toy-scale sanity on the ordering of systems; failures are warnings only."""
    out = []
    try:
        base, sc = report.get("ss-baseline", depth), report.get("ss-sc", depth)
    except KeyError:
        return out
    if base.mel_distance is not None and sc.mel_distance is not None and sc.mel_distance > base.mel_distance:
        out.append(
            f"ss-sc mel distance {sc.mel_distance:.4f} exceeds ss-baseline {base.mel_distance:.4f} at n_a={depth}"
        )
    return out


def plot_report(report: EvalReport, out_dir, metrics=METRICS) -> list[Path]:
    """One figure per metric: tokens per 12.5 Hz frame on x, metric on y, a line per system."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    systems = list(dict.fromkeys(r.system for r in report.records))
    for metric in metrics:
        if all(getattr(r, metric) is None for r in report.records):
            continue
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for name in systems:
            rows = sorted((r for r in report.records if r.system == name), key=lambda r: r.tokens_per_frame)
            xs = [r.tokens_per_frame for r in rows]
            ys = [math.nan if getattr(r, metric) is None else getattr(r, metric) for r in rows]
            ax.plot(xs, ys, marker="o", ms=3, lw=1.2, label=name)
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_xlabel("tokens/frame (12.5 Hz)")
        ax.set_ylabel(metric.replace("_", " "))
        ax.grid(alpha=0.3)
        ax.legend(fontsize=7, frameon=False)
        fig.tight_layout()
        path = out_dir / f"depth_sweep_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths

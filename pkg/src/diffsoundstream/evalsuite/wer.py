"""Word error rate and the external-transcriber plug-in.

A transcriber is any command that takes a wav path as its last argument and
prints the UTF-8 transcript on stdout; a nonzero exit status marks failure.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass, field


def normalize(text: str) -> list[str]:
    return text.lower().split()


def word_edits(ref: list[str], hyp: list[str]) -> int:
    """Levenshtein distance over words (substitutions, insertions, deletions)."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def corpus_wer(refs: list[str], hyps: list[str]) -> float:
    """Total word edits over total reference words."""
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references but {len(hyps)} hypotheses")
    ref_words = [normalize(r) for r in refs]
    total = sum(len(r) for r in ref_words)
    if total == 0:
        raise ValueError("references contain no words")
    return sum(word_edits(r, normalize(h)) for r, h in zip(ref_words, hyps)) / total


def transcribe(command: str, wav_path, timeout: float = 600.0) -> str:
    argv = shlex.split(command) + [str(wav_path)]
    proc = subprocess.run(argv, capture_output=True, timeout=timeout)
    if proc.returncode != 0:
        err = proc.stderr.decode("utf-8", "replace").strip()
        raise RuntimeError(f"transcriber exited with {proc.returncode}: {err[:200]}")
    return proc.stdout.decode("utf-8").strip()


@dataclass
class WerResult:
    wer: float | None
    scored: list[str] = field(default_factory=list)
    errors: dict = field(default_factory=dict)  # clip -> message

    @property
    def excluded(self) -> int:
        return len(self.errors)


def wer_eval(clips: dict, transcriber_command: str, references: dict) -> WerResult:
    """Corpus WER of ``{clip_name: wav_path}``; failing clips are excluded and listed."""
    refs, hyps, result = [], [], WerResult(None)
    for name, path in clips.items():
        if name not in references:
            result.errors[name] = "no reference transcript"
            continue
        try:
            hyps.append(transcribe(transcriber_command, path))
        except (OSError, RuntimeError, subprocess.TimeoutExpired, UnicodeDecodeError) as exc:
            result.errors[name] = str(exc)
            continue
        refs.append(references[name])
        result.scored.append(name)
    if refs:
        result.wer = corpus_wer(refs, hyps)
    return result

"""Waveforms, WAV I/O, ingestion and the synthetic pseudo-speech corpus."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .tokens import SAMPLE_RATE

log = logging.getLogger(__name__)

MIN_CLIP_SECONDS = 0.5
AUDIO_SUFFIXES = (".wav",)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    name: str = ""

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float32)
        if x.ndim != 1:
            raise ValueError(f"Waveform holds mono audio, got shape {x.shape}")
        self.samples = np.clip(np.nan_to_num(x), -1.0, 1.0)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path) -> tuple[np.ndarray, int]:
    """Return float samples in [-1, 1] shaped ``(N, channels)`` and the rate."""
    rate, data = wavfile.read(str(path))
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        x = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float32) - 128.0) / 128.0
    else:
        x = data.astype(np.float32)
    return x, int(rate)


def write_wav(path, wave: Waveform, pcm16: bool = True) -> None:
    x = np.clip(wave.samples, -1.0, 1.0)
    if pcm16:
        wavfile.write(str(path), wave.sample_rate, np.round(x * 32767.0).astype(np.int16))
    else:
        wavfile.write(str(path), wave.sample_rate, x.astype(np.float32))


def resample(x: np.ndarray, rate_in: int, rate_out: int = SAMPLE_RATE) -> np.ndarray:
    if rate_in == rate_out:
        return np.asarray(x, dtype=np.float32)
    ratio = Fraction(rate_out, rate_in)
    return resample_poly(x, ratio.numerator, ratio.denominator, axis=0).astype(np.float32)


def load_waveform(path, peak: float = 0.95) -> Waveform:
    """Decode, downmix, resample to 24 kHz and peak-normalize."""
    x, rate = read_wav(path)
    mono = x.mean(axis=1)
    mono = resample(mono, rate)
    top = float(np.abs(mono).max()) if len(mono) else 0.0
    if top > 0:
        mono = mono * (peak / top)
    return Waveform(mono, SAMPLE_RATE, name=Path(path).stem)


@dataclass
class IngestReport:
    loaded: list = field(default_factory=list)
    skipped_short: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


def ingest(source) -> tuple[list[Waveform], IngestReport]:
    """Load every clip in a directory, or every path listed in a manifest file.

    A manifest is a text file with one path per line (relative paths resolve
    against the manifest's directory) or a JSON list of paths.
    """
    source = Path(source)
    report = IngestReport()
    if source.is_dir():
        paths = sorted(p for p in source.rglob("*") if p.suffix.lower() in AUDIO_SUFFIXES)
    else:
        text = source.read_text()
        try:
            entries = json.loads(text)
        except json.JSONDecodeError:
            entries = [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
        paths = [(source.parent / e) if not Path(e).is_absolute() else Path(e) for e in entries]
    waves = []
    for path in paths:
        try:
            wave = load_waveform(path)
        except Exception as exc:  # noqa: BLE001 - recorded per file
            report.errors[str(path)] = f"{type(exc).__name__}: {exc}"
            continue
        if wave.duration < MIN_CLIP_SECONDS:
            report.skipped_short.append(str(path))
            log.warning("skipping %s: %.3f s is shorter than %.1f s", path, wave.duration, MIN_CLIP_SECONDS)
            continue
        waves.append(wave)
        report.loaded.append(str(path))
    if not paths:
        report.warnings.append(f"no audio files found in {source}")
        log.warning("no audio files found in %s", source)
    return waves, report


def _formant_filter(excitation: np.ndarray, formants, rate: int) -> np.ndarray:
    from scipy.signal import lfilter

    y = np.zeros_like(excitation)
    for freq, bw, gain in formants:
        r = math.exp(-math.pi * bw / rate)
        theta = 2 * math.pi * freq / rate
        y += gain * lfilter([1 - r], [1, -2 * r * math.cos(theta), r * r], excitation)
    return y


def synth_clip(rng: np.random.Generator, duration: float, rate: int = SAMPLE_RATE) -> np.ndarray:
    """Harmonic pulse train with drifting pitch and formants plus noise bursts."""
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    f0_base = rng.uniform(90.0, 220.0)
    drift = rng.uniform(0.5, 3.0)
    f0 = f0_base * (1.0 + 0.15 * np.sin(2 * np.pi * drift * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / rate
    n_harm = int(min(30, (rate / 2 - 1) // (f0_base * 1.2)))
    k = np.arange(1, n_harm + 1)[:, None]
    source = (np.sin(k * phase[None]) / k).sum(0)
    # voiced/unvoiced syllable envelope at a few Hz
    syll = rng.uniform(2.5, 5.0)
    env = 0.5 * (1 + np.sin(2 * np.pi * syll * t + rng.uniform(0, 2 * np.pi)))
    formants = [
        (rng.uniform(500, 900), 80.0, 1.0),
        (rng.uniform(1100, 1900), 120.0, 0.6),
        (rng.uniform(2300, 3200), 160.0, 0.3),
    ]
    voiced = _formant_filter(source * env, formants, rate)
    noise = rng.standard_normal(n) * 0.05
    bursts = np.zeros(n)
    for _ in range(max(1, int(duration * 2))):
        start = rng.integers(0, max(1, n - rate // 20))
        length = int(rng.uniform(0.02, 0.06) * rate)
        bursts[start : start + length] = 1.0
    x = voiced + noise * bursts * 6.0 + noise * 0.1
    return (0.9 * x / max(np.abs(x).max(), 1e-9)).astype(np.float32)


def synth_dataset(seed: int, n_clips: int, duration: float) -> list[Waveform]:
    """Deterministic pseudo-speech clips for smoke training."""
    rng = np.random.default_rng(seed)
    return [Waveform(synth_clip(rng, duration), SAMPLE_RATE, name=f"synth_{seed}_{i:04d}") for i in range(n_clips)]

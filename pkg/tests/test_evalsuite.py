import functools
import json
import sys

import numpy as np
import pytest

from diffsoundstream.audio import Waveform, synth_dataset
from diffsoundstream.evalsuite import (
    EvalReport,
    corpus_wer,
    depth_sweep,
    log_spectral_distortion,
    mel_distance,
    plot_report,
    wer_eval,
    word_edits,
)
from diffsoundstream.pipeline import train_stage
from diffsoundstream.pipeline.artifacts import Run
from conftest import clone


def edit_distance_oracle(a, b):
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def test_wer_examples():
    assert corpus_wer(["the cat sat"], ["the cat sat"]) == 0.0
    assert corpus_wer(["the cat sat"], ["the bat sat"]) == pytest.approx(1 / 3)
    assert corpus_wer(["the cat sat"], ["cat sat on it"]) == pytest.approx(1.0)
    assert corpus_wer(["a b", "c d e"], ["a", "c d e f"]) == pytest.approx(2 / 5)
    assert corpus_wer(["Hello World"], ["hello   world"]) == 0.0
    with pytest.raises(ValueError):
        corpus_wer([""], ["x"])


def test_wer_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(0)
    vocab = list("abcdef")
    for _ in range(1000):
        ref = [str(w) for w in rng.choice(vocab, rng.integers(0, 9))]
        hyp = [str(w) for w in rng.choice(vocab, rng.integers(0, 9))]
        assert word_edits(ref, hyp) == edit_distance_oracle(tuple(ref), tuple(hyp))


def test_spectral_metrics_basic(rng):
    ref = synth_dataset(0, 1, 0.5)[0]
    assert mel_distance(ref, ref) == 0.0 and log_spectral_distortion(ref, ref) == 0.0
    slight = Waveform(ref.samples + 0.001 * rng.standard_normal(len(ref)))
    heavy = Waveform(ref.samples + 0.1 * rng.standard_normal(len(ref)))
    assert mel_distance(ref, heavy) > 10 * mel_distance(ref, slight)
    assert log_spectral_distortion(ref, heavy) == pytest.approx(log_spectral_distortion(heavy, ref))
    # different lengths compare the common prefix
    assert mel_distance(ref, Waveform(ref.samples[:-100])) == 0.0
    with pytest.raises(ValueError):
        mel_distance(ref, Waveform(np.zeros(0)))


@pytest.fixture
def transcriber(tmp_path):
    script = tmp_path / "asr.py"
    script.write_text(
        "import sys, pathlib\n"
        "name = pathlib.Path(sys.argv[1]).stem\n"
        "if name == 'broken':\n"
        "    sys.exit('model crashed')\n"
        "print({'one': 'hello there world', 'two': 'good day'}.get(name, ''))\n"
    )
    return f"{sys.executable} {script}"


def test_wer_eval_excludes_failures(transcriber, tmp_path):
    clips = {n: tmp_path / f"{n}.wav" for n in ("one", "two", "broken", "unknown")}
    refs = {"one": "hello world", "two": "good day", "broken": "x"}
    res = wer_eval(clips, transcriber, refs)
    assert res.scored == ["one", "two"]
    assert res.excluded == 2 and "model crashed" in res.errors["broken"]
    assert res.wer == pytest.approx(1 / 4)


@pytest.fixture(scope="module")
def sweep_run(tiny_run, tmp_path_factory):
    cfg = clone(tiny_run, tmp_path_factory.mktemp("sweep"))
    baseline = clone(cfg, tmp_path_factory.mktemp("baseline"), **{"ss_sc.semantic": False})
    train_stage("ss-sc", baseline)
    Run(baseline).ss_sc(semantic=False).rename(Run(cfg).ss_sc(semantic=False))
    return cfg


def test_depth_sweep_records_and_plots(sweep_run, transcriber, tmp_path):
    clips = {"one": synth_dataset(11, 1, 0.5)[0], "two": synth_dataset(12, 1, 0.5)[0]}
    systems = ["ss-baseline", "ss-sc", "diff-ss", "diff-ss-nosem", "diff-ss-distilled"]
    report = depth_sweep(systems, [1, 3], clips, sweep_run, steps=2, transcriber=transcriber,
                         references={"one": "hello world", "two": "good day"},
                         scorers={"rms": lambda r, h: float(np.sqrt(np.mean(h.samples**2)))})
    assert len(report.records) == 10
    assert {(r.system, r.n_a) for r in report.records} == {(s, d) for s in systems for d in (1, 3)}
    status = {(r.system, r.n_a): r.status for r in report.records}
    assert status[("ss-baseline", 1)] == status[("ss-sc", 3)] == status[("diff-ss", 3)] == "ok"
    assert status[("diff-ss", 1)] == status[("diff-ss-nosem", 3)] == "missing"
    ok = report.get("diff-ss-distilled", 3)
    assert ok.mel_distance > 0 and ok.wer == pytest.approx(0.25) and "rms" in ok.extra
    assert report.get("ss-sc", 3).tokens_per_frame == 4 and report.get("ss-baseline", 3).tokens_per_frame == 3

    report.write_jsonl(tmp_path / "r.jsonl")
    again = EvalReport.read_jsonl(tmp_path / "r.jsonl")
    assert [r.system for r in again.records] == [r.system for r in report.records]
    assert json.loads((tmp_path / "r.jsonl").read_text().splitlines()[0])["metadata"]["depths"] == [1, 3]

    figures = plot_report(report, tmp_path / "fig")
    assert {f.name for f in figures} == {"depth_sweep_mel_distance.png", "depth_sweep_lsd.png", "depth_sweep_wer.png"}
    assert all(f.read_bytes()[:4] == b"\x89PNG" for f in figures)


def test_unknown_system(sweep_run):
    with pytest.raises(KeyError):
        depth_sweep(["wavenet"], [1], {}, sweep_run)

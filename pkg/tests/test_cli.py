import json

import pytest

from diffsoundstream.audio import synth_dataset, write_wav
from diffsoundstream.cli import main
from conftest import TINY, clone, tiny_config


def tiny_flags(workdir):
    flags = ["--workdir", str(workdir)]
    for k, v in TINY.items():
        flags += ["--set", f"{k}={v}"]
    return flags


def tsv(out):
    return dict(line.split("\t", 1) for line in out.strip().splitlines())


def test_train_stages_in_order(tmp_path, capsys):
    flags = tiny_flags(tmp_path / "run")
    assert main(["train", "ss-sc", *flags]) == 2
    assert "kmeans" in capsys.readouterr().err
    assert main(["train", "kmeans", *flags]) == 0
    out = tsv(capsys.readouterr().out)
    assert out["stage"] == "kmeans" and out["metric"] == "distortion"
    assert (tmp_path / "run" / "config.yaml").exists()


def test_tokenize_decode_inspect(tiny_run, tmp_path, capsys):
    cfg = clone(tiny_run, tmp_path)
    flags = tiny_flags(cfg.workdir)
    write_wav(tmp_path / "in.wav", synth_dataset(3, 1, 1.0)[0])
    assert main(["tokenize", str(tmp_path / "in.wav"), str(tmp_path / "t.dstk"), "--n-a", "3", *flags]) == 0
    out = tsv(capsys.readouterr().out)
    assert out["frames"] == "13" and out["payload_bits"] == str(13 * 4 * 11)

    assert main(["decode", str(tmp_path / "t.dstk"), str(tmp_path / "o.wav"), "--decoder", "distilled", *flags]) == 0
    assert tsv(capsys.readouterr().out)["evaluations"] == "4"
    assert (tmp_path / "o.wav").exists()

    assert main(["inspect", str(tmp_path / "t.dstk")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n_a"] == 3 and info["bitrate_bps"] == pytest.approx(4 * 11 * 12.5)
    assert main(["inspect", cfg.workdir]) == 0
    assert "ss_sc.dsck" in json.loads(capsys.readouterr().out)
    assert main(["inspect", "--set", "distill.lr=2e-4"]) == 0
    assert json.loads(capsys.readouterr().out)["distill"]["lr"] == 2e-4

    assert main(["decode", str(tmp_path / "in.wav"), str(tmp_path / "x.wav"), *flags]) == 2
    assert "error" in capsys.readouterr().err


def test_eval_writes_report_and_figures(tiny_run, tmp_path, capsys):
    cfg = clone(tiny_run, tmp_path)
    out_dir = tmp_path / "eval"
    args = ["eval", "--systems", "ss-sc,diff-ss", "--depths", "2,3", "--steps", "2", "--out", str(out_dir)]
    assert main(args + tiny_flags(cfg.workdir)) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("system\tn_s\tn_a")
    assert sum(1 for line in lines if line.startswith(("ss-sc\t", "diff-ss\t"))) == 4
    assert (out_dir / "report.jsonl").exists() and (out_dir / "depth_sweep_mel_distance.png").exists()
    assert any(line.startswith("figure\t") for line in lines)


def test_bad_override(capsys):
    with pytest.raises(SystemExit):
        main(["inspect", "--set", "novalue"])
    assert main(["inspect", "--set", "data.nope=1"]) == 2


def test_eval_clip_filter(tmp_path):
    from diffsoundstream.cli import _clips

    for i, secs in enumerate((0.6, 1.0, 1.2, 2.0)):
        write_wav(tmp_path / f"c{i}.wav", synth_dataset(i, 1, secs)[0])
    cfg = tiny_config(tmp_path / "run")
    assert sorted(_clips(tmp_path, cfg, min_seconds=1.0)) == ["c1", "c2", "c3"]
    picked = _clips(tmp_path, cfg, min_seconds=1.0, max_clips=2)
    assert len(picked) == 2 and list(picked) == list(_clips(tmp_path, cfg, min_seconds=1.0, max_clips=2))
    with pytest.raises(ValueError):
        _clips(tmp_path, cfg, min_seconds=5.0)

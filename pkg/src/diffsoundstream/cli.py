"""``dss``: train, tokenize, decode, eval and inspect from the command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bitstream
from .audio import ingest, synth_dataset
from .pipeline.artifacts import STAGES, MissingPrerequisite, Run, SpecMismatch, summarize
from .pipeline.config import dump_config, load_config
from .pipeline.stages import PRIMARY_METRIC, loss_drop, read_metrics, train_stage
from .pipeline.workflows import DECODERS, WorkflowError, decode_cmd, tokenize_cmd


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise SystemExit(f"--set expects key=value, got {pair!r}")
        out[key.strip()] = value
    return out


def _config(args):
    ov = _overrides(args.set)
    if args.workdir:
        ov["workdir"] = args.workdir
    if args.seed is not None:
        ov["seed"] = str(args.seed)
    return load_config(args.config, ov, base=args.profile)


def cmd_train(args) -> int:
    cfg = _config(args)
    run = Run(cfg).ensure()
    if args.restart and run.artifact(args.stage).exists():
        run.artifact(args.stage).unlink()
    dump_config(cfg, run.root / "config.yaml")
    path = train_stage(args.stage, cfg)
    recs = read_metrics(run.metrics(args.stage))
    key = PRIMARY_METRIC[args.stage]
    drop = f"{loss_drop(recs, key):.3f}" if len(recs) > 1 else "n/a"
    print(f"stage\t{args.stage}\ncheckpoint\t{path}\nmetric\t{key}\nfinal\t{recs[-1][key]:.6g}\ndrop\t{drop}")
    return 0


def cmd_tokenize(args) -> int:
    cfg = _config(args)
    stream = tokenize_cmd(args.input, args.output, cfg, args.n_s, args.n_a, args.codec)
    print(f"frames\t{stream.num_frames}\nn_s\t{stream.spec.n_s}\nn_a\t{stream.spec.n_a}\n"
          f"payload_bits\t{stream.payload_bits}\nbytes\t{len(stream.to_bytes())}")
    return 0


def cmd_decode(args) -> int:
    cfg = _config(args)
    res = decode_cmd(args.input, args.output, cfg, args.decoder, args.steps, args.seed or 0, args.codec)
    print(f"decoder\t{res.decoder}\nsamples\t{len(res.wave)}\nevaluations\t{res.evaluations}")
    return 0


def _clips(source, cfg, min_seconds=0.0, max_clips=None) -> dict:
    if source:
        waves, report = ingest(source)
        for path, err in report.errors.items():
            print(f"skip\t{path}\t{err}", file=sys.stderr)
    else:
        waves = synth_dataset(cfg.data.synth_seed + 1, 4, cfg.data.synth_seconds)
    clips = {w.name or f"clip{i:03d}": w for i, w in enumerate(waves) if w.duration >= min_seconds}
    if max_clips is not None and len(clips) > max_clips:
        # uniform sample without replacement, reproducible from the run seed
        keep = set(np.random.default_rng(cfg.seed).choice(len(clips), max_clips, replace=False).tolist())
        clips = {k: w for i, (k, w) in enumerate(clips.items()) if i in keep}
    if not clips:
        raise ValueError("no evaluation clips left after filtering")
    return clips


def cmd_eval(args) -> int:
    from .evalsuite import depth_sweep, plot_report

    cfg = _config(args)
    refs = json.loads(Path(args.references).read_text()) if args.references else None
    clips = _clips(args.clips, cfg, args.min_seconds, args.max_clips)
    depths = [int(d) for d in args.depths.split(",")]
    report = depth_sweep(args.systems.split(","), depths, clips, cfg, args.steps, args.seed or 0, args.transcriber, refs)
    out = Path(args.out or Path(cfg.workdir) / "eval")
    out.mkdir(parents=True, exist_ok=True)
    report.write_jsonl(out / "report.jsonl")
    figures = plot_report(report, out)
    print("system\tn_s\tn_a\ttokens_per_frame\tstatus\tmel_distance\tlsd\twer")
    for r in report.records:
        cells = [r.system, r.n_s, r.n_a, r.tokens_per_frame, r.status] + [
            "" if v is None else f"{v:.5g}" for v in (r.mel_distance, r.lsd, r.wer)
        ]
        print("\t".join(map(str, cells)))
    for f in figures:
        print(f"figure\t{f}")
    for w in report.warnings:
        print(f"warning\t{w}")
    return 0


def cmd_inspect(args) -> int:
    target = Path(args.path) if args.path else None
    if target is None:
        cfg = _config(args)
        print(json.dumps(cfg.to_dict(), indent=2))
        return 0
    if target.is_dir():
        info = {p.name: summarize(p) for p in sorted(target.iterdir()) if p.suffix in (".dsck", ".dscb")}
        info.update({p.name: {"records": len(read_metrics(p))} for p in sorted(target.glob("metrics_*.jsonl"))})
    elif target.suffix == ".dstk":
        sem, ac, spec = bitstream.read(target)
        info = {"kind": "token stream", "frames": len(ac), "n_s": spec.n_s, "n_a": spec.n_a,
                "payload_bits": bitstream.payload_bits(len(ac), spec), "bytes": target.stat().st_size,
                "bitrate_bps": spec.depth * 11 * 12.5}
    else:
        info = summarize(target)
    print(json.dumps(info, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--profile", choices=("desk", "full"), help="base profile (default: desk, or the file's)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, repeatable")
    common.add_argument("--workdir", help="run directory (same as --set workdir=...)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dss", description="Speech tokenizer and diffusion decoder toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="run one training stage")
    t.add_argument("stage", choices=STAGES)
    t.add_argument("--restart", action="store_true", help="discard the stage checkpoint first")
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("tokenize", parents=[common], help="wav -> .dstk")
    k.add_argument("input")
    k.add_argument("output")
    k.add_argument("--n-s", type=int, default=1, choices=(0, 1))
    k.add_argument("--n-a", type=int, default=8)
    k.add_argument("--codec", default="ss-sc", choices=("ss-sc", "baseline"))
    k.set_defaults(func=cmd_tokenize)

    d = sub.add_parser("decode", parents=[common], help=".dstk -> wav")
    d.add_argument("input")
    d.add_argument("output")
    d.add_argument("--decoder", choices=DECODERS)
    d.add_argument("--steps", type=int, help="DDPM steps for the diffusion decoder")
    d.add_argument("--codec", default="ss-sc", choices=("ss-sc", "baseline"))
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", parents=[common], help="quality vs token depth sweep")
    e.add_argument("--systems", default="ss-baseline,ss-sc,diff-ss,diff-ss-nosem,diff-ss-distilled")
    e.add_argument("--depths", default="1,2,3,4,5,6,7,8")
    e.add_argument("--clips", help="directory or manifest (default: synthetic held-out clips)")
    e.add_argument("--min-seconds", type=float, default=0.0, help="drop clips shorter than this")
    e.add_argument("--max-clips", type=int, help="evaluate a uniform random subset of this size")
    e.add_argument("--steps", type=int)
    e.add_argument("--transcriber", help="command printing a transcript for a wav path argument")
    e.add_argument("--references", help="JSON mapping clip name -> reference transcript")
    e.add_argument("--out", help="report directory (default: <workdir>/eval)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", parents=[common], help="describe a checkpoint, stream, run dir or config")
    i.add_argument("path", nargs="?")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (MissingPrerequisite, SpecMismatch, WorkflowError, bitstream.BitstreamError, KeyError, ValueError) as exc:
        print(f"dss {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

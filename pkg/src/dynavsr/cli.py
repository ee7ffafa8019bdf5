"""Command-line entry point: ``dynavsr <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import DATA_ROOT_ENV, load_config
from .data import to_numpy, to_tensor, write_synthetic_dataset
from .degrade import read_frames, write_frames
from .evaluation import render_table
from .meta import meta_test_adapt

log = logging.getLogger("dynavsr")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--seed", type=int, help="run seed (overrides the config)")
    p.add_argument("--workers", type=int, help="parallel evaluation workers")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, repeatable (e.g. meta.alpha=1e-4)")
    p.add_argument("--luma-only", action="store_true", help="compute metrics on the Y channel")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="dynavsr",
        description=f"Blind video SR with meta-learned test-time adaptation. "
                    f"Relative data roots resolve against ${DATA_ROOT_ENV} when set.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic frame-sequence dataset")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--frames", type=int, default=7)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--prefix", default="seq")

    p = sub.add_parser("degrade", parents=[common], help="write HR/LR/SLR triples with random kernels")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--mode", choices=("direct", "bicubic_after_blur"), default="direct")

    sub.add_parser("pretrain-vsr", parents=[common], help="train the backbone on bicubic LR (baseline)")
    sub.add_parser("pretrain-mfdn", parents=[common], help="supervised MFDN pretraining")

    p = sub.add_parser("meta-train", parents=[common], help="meta-train MFDN and backbone jointly")
    p.add_argument("--resume", action="store_true", help="continue from the latest iteration checkpoint")

    p = sub.add_parser("adapt", parents=[common], help="adapt to one LR sequence and write HR frames")
    p.add_argument("--input", type=Path, required=True, help="directory of LR PNG frames")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)

    p = sub.add_parser("eval", parents=[common], help="run the evaluation protocols")
    p.add_argument("--checkpoint", type=Path, help="meta-trained checkpoint (default: run dir)")
    p.add_argument("--baseline-checkpoint", type=Path, help="baseline backbone checkpoint")
    p.add_argument("--report-dir", type=Path)
    p.add_argument("--sweep", metavar="PARAM=V1,V2,...",
                   help="also sweep a meta-test knob (inner_steps or alpha)")

    p = sub.add_parser("profile", parents=[common], help="time preprocessing vs super-resolution")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--baseline-checkpoint", type=Path)
    return parser


def _config(args):
    overrides = list(args.override)
    if args.luma_only:
        overrides.append("eval.luma_only=true")
    return load_config(args.config, overrides, seed=args.seed, workers=args.workers)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _config(args)
        cmd = args.command
        if cmd == "synth":
            ids = write_synthetic_dataset(args.output, args.count, cfg.seed, args.frames,
                                          args.size, args.prefix)
            print(f"wrote {len(ids)} sequences to {args.output}")
        elif cmd == "degrade":
            written = pipeline.degrade_stage(cfg, args.output, args.split, args.mode)
            print(f"wrote {len(written)} triples to {args.output}")
        elif cmd == "pretrain-vsr":
            print(pipeline.pretrain_vsr_stage(cfg))
        elif cmd == "pretrain-mfdn":
            print(pipeline.pretrain_mfdn_stage(cfg))
        elif cmd == "meta-train":
            print(pipeline.meta_train_stage(cfg, resume=args.resume))
        elif cmd == "adapt":
            systems = pipeline.load_systems(cfg, args.checkpoint)
            a = systems.adapted
            lr = to_tensor(read_frames(args.input))
            hr, res = meta_test_adapt(a.phi, a.theta, lr, a.phi_pretrained, a.nets, a.meta)
            write_frames(to_numpy(hr), args.output)
            print(json.dumps({"frames": len(lr), "preprocess_s": round(res.wall_time_preprocess, 4),
                              "updates": res.n_updates, "output": str(args.output)}))
        elif cmd == "eval":
            systems = pipeline.load_systems(cfg, args.checkpoint, args.baseline_checkpoint)
            reports = pipeline.eval_stage(cfg, systems, args.report_dir)
            print(render_table(reports), end="")
            if args.sweep:
                param, _, raw = args.sweep.partition("=")
                values = [v for v in raw.split(",") if v]
                for r in pipeline.sweep_stage(cfg, param, values, systems, args.report_dir):
                    print(f"{param}={r['value']:<8} {r['protocol']:<14} {r['psnr_db']:.2f} dB")
        elif cmd == "profile":
            systems = pipeline.load_systems(cfg, args.checkpoint, args.baseline_checkpoint)
            print(pipeline.render_profile(pipeline.profile_stage(cfg, systems)), end="")
    except Exception as exc:  # surfaced as a nonzero exit with the message
        if args.verbose:
            raise
        print(f"dynavsr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

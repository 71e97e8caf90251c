"""Command line entry point.

Exit codes: 0 success, 1 validation/input error, 2 failed check.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from typing import Optional, Sequence

from . import config as config_mod
from . import pipeline

EXIT_OK, EXIT_INVALID, EXIT_CHECK = 0, 1, 2


def _load_config(args):
    if args.config:
        cfg, text = config_mod.load(args.config)
    else:
        cfg, text = config_mod.RunConfig(), None
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg, text


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value run configuration")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--output-dir", help="override the output directory")

    parser = argparse.ArgumentParser(prog="rem3dr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="write train/test CSVs and a group summary")
    sub.add_parser("pretrain", parents=[common], help="per-modality contrastive pretraining")
    p = sub.add_parser("train-joint", parents=[common], help="joint SGM training from stage-1 checkpoints")
    p.add_argument("--baseline", action="store_true", help="train the naive joint baseline instead")
    p = sub.add_parser("eval", parents=[common], help="grouped test metrics (+ baseline comparison)")
    p.add_argument("--checkpoint", help="model checkpoint (default: <output>/checkpoints/joint.json)")
    p.add_argument("--baseline-checkpoint", help="baseline checkpoint to compare against")
    p = sub.add_parser("theory", parents=[common], help="numerical stability/divergence checks")
    p.add_argument("--trials", type=int, default=10_000, help="adversarial containment trials")
    sub.add_parser("probe", parents=[common], help="double-well sharpness/gamma experiment")
    sub.add_parser("run", parents=[common], help="gen-data, pretrain, train-joint, baseline, eval")
    p = sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, text = _load_config(args)
        cfg.validate()
        cmd = args.command
        if cmd == "show-config":
            sys.stdout.write(config_mod.render(cfg))
        elif cmd == "gen-data":
            print(json.dumps(pipeline.cmd_gen_data(cfg, text), indent=2))
        elif cmd == "pretrain":
            curves = pipeline.cmd_pretrain(cfg)
            print(json.dumps({f"m{k + 1}": {"first": c[0], "last": c[-1], "steps": len(c)} for k, c in curves.items()}))
        elif cmd == "train-joint":
            _, reports = pipeline.cmd_train_joint(cfg, baseline=args.baseline)
            print(json.dumps({"steps": len(reports), "final_loss": reports[-1].loss_total if reports else None}))
        elif cmd == "eval":
            print(json.dumps(pipeline.cmd_eval(cfg, args.checkpoint, args.baseline_checkpoint), indent=2))
        elif cmd == "theory":
            doc = pipeline.cmd_theory(cfg, trials=args.trials)
            print(json.dumps(doc, indent=2))
            if not doc["all_passed"]:
                failed = [k for k, c in doc["checks"].items() if not c["passed"]]
                print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
                return EXIT_CHECK
        elif cmd == "probe":
            print(json.dumps(pipeline.cmd_probe(cfg)["summary"], indent=2))
        elif cmd == "run":
            print(json.dumps(pipeline.run_all(cfg, text), indent=2))
    except (ValueError, pipeline.PipelineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK

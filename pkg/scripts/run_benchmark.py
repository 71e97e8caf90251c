#!/usr/bin/env python3
"""Desk benchmark: Re-M3Dr vs the naive joint baseline on one or more seeds.

    python scripts/run_benchmark.py --seeds 42 1 2 3 --out runs/bench

Per seed it runs gen-data, pretrain, train-joint (SGM and baseline) and eval,
then prints overall and Few-group test MSE.  ``--ablate`` adds two extra
rows per seed: pretraining with plain joint Adam, and SGM with gamma pinned
to 1 (min-norm weighting only).
"""

import argparse
import dataclasses
import json
import time
from pathlib import Path

from rem3dr import config as cm
from rem3dr import pipeline
from rem3dr.model import init


def variant(cfg, pretrain: bool, baseline: bool):
    _, train, test = pipeline.build_datasets(cfg)
    net = init(cfg.arch_spec())
    if pretrain:
        for k in range(len(cfg.data.modality_dims)):
            pipeline.pretrain_modality(net, train, k, cfg)
    pipeline.train_joint(net, train, cfg, baseline=baseline)
    rep = pipeline.evaluate(net, test)
    return rep.overall.mse, rep.per_group["Few"].mse if "Few" in rep.per_group else float("nan")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--seeds", type=int, nargs="+", default=[42])
    ap.add_argument("--out", default="runs/bench")
    ap.add_argument("--ablate", action="store_true")
    args = ap.parse_args()

    base_cfg = cm.load(args.config)[0] if args.config else cm.RunConfig()
    rows = []
    for seed in args.seeds:
        cfg = dataclasses.replace(base_cfg, seed=seed, output_dir=str(Path(args.out) / f"seed{seed}"))
        t0 = time.perf_counter()
        doc = pipeline.run_all(cfg)
        c = doc["comparison"]
        row = {
            "seed": seed,
            "seconds": round(time.perf_counter() - t0, 1),
            "mse": [c["overall"]["mse_rem3dr"], c["overall"]["mse_baseline"]],
            "few_mse": [c.get("Few", {}).get("mse_rem3dr"), c.get("Few", {}).get("mse_baseline")],
        }
        if args.ablate:
            row["pretrain_plain_adam"] = variant(cfg, pretrain=True, baseline=True)
            sgm = dataclasses.replace(cfg.stage2.sgm, gamma_min=1.0, gamma_max=1.0)
            pinned = dataclasses.replace(cfg, stage2=dataclasses.replace(cfg.stage2, sgm=sgm))
            row["sgm_gamma_pinned"] = variant(pinned, pretrain=True, baseline=False)
        rows.append(row)
        print(
            f"seed {seed:>4}: MSE rem3dr {row['mse'][0]:.4f} baseline {row['mse'][1]:.4f} | "
            f"Few {row['few_mse'][0]:.4f} vs {row['few_mse'][1]:.4f} ({row['seconds']}s)",
            flush=True,
        )
        for key in ("pretrain_plain_adam", "sgm_gamma_pinned"):
            if key in row:
                print(f"           {key}: MSE {row[key][0]:.4f} Few {row[key][1]:.4f}")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "benchmark.json").write_text(json.dumps({"schema_version": 1, "rows": rows}, indent=2) + "\n")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Drive the full pipeline through the CLI: pretrain, adapter, eval.

Example:
    python scripts/run_pipeline.py --out-dir runs/demo --seed 0 \
        --pretrain-steps 4000 --adapter-steps 2000
"""

import argparse
import sys

from flowprop.cli import dispatch


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="runs/pipeline")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pretrain-steps", type=int, default=4000)
    ap.add_argument("--adapter-steps", type=int, default=2000)
    ap.add_argument("--mode", default="gmfm")
    ap.add_argument("--overwrite", action="store_true")
    args = ap.parse_args()

    common = ["--out-dir", args.out_dir, "--seed", str(args.seed)]
    if args.overwrite:
        common.append("--overwrite")

    steps = [
        ["pretrain", "--steps", str(args.pretrain_steps),
         "--set", "pretrain.batch_size=32",
         "--set", "pretrain.optimizer.lr=0.005",
         "--set", "pretrain.optimizer.weight_decay=0.0"],
        ["train-adapter", "--steps", str(args.adapter_steps),
         "--set", f"train.mode={args.mode}"],
        ["eval"],
    ]
    for cmd in steps:
        rc = dispatch(cmd + common)
        if rc != 0:
            print(f"{cmd[0]} failed with exit code {rc}", file=sys.stderr)
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())

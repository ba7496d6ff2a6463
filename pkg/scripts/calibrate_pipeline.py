#!/usr/bin/env python3
"""End-to-end calibration: backbone, adapters in every mode, held-out metrics.

Prints the quantities behind the directional acceptance criteria so the
defaults can be tuned without rerunning the test suite.
"""

import argparse
import dataclasses
import time

import numpy as np

from flowprop.ablations import (
    EvalConfig,
    evaluate_propagation,
    pair_motion_comparison,
    train_style_pool,
)
from flowprop.backbone import BackboneConfig, PretrainConfig, pretrain
from flowprop.gmfm import TrainConfig, train_adapter
from flowprop.optim import AdamWConfig
from flowprop.sampler import SamplerConfig
from flowprop.synthvid import SyntheticDataset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--pretrain-steps", type=int, default=2000)
    ap.add_argument("--adapter-steps", type=int, default=2000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--modes", nargs="+",
                    default=["gmfm", "standard_fm", "gmfm_no_rspf"])
    ap.add_argument("--eval-samples", type=int, default=64)
    ap.add_argument("--pair-trials", type=int, default=200)
    ap.add_argument("--lr", type=float, default=1e-3)
    args = ap.parse_args()

    dataset = SyntheticDataset()
    eval_cfg = EvalConfig(eval_samples=args.eval_samples, pair_trials=args.pair_trials)
    pool = train_style_pool(dataset, eval_cfg)
    bcfg = BackboneConfig()
    pcfg = PretrainConfig(steps=args.pretrain_steps, batch_size=32,
                          optimizer=AdamWConfig(lr=5e-3, weight_decay=0.0))
    t0 = time.perf_counter()
    pre = pretrain(bcfg, dataset, args.pretrain_steps, pcfg, seed=100)
    theta = pre.params
    print(f"backbone: {time.perf_counter()-t0:.0f}s, "
          f"loss {np.mean(pre.loss_trace[-100:]):.4f}, margin {pre.cfg_margin:.3f}")

    t0 = time.perf_counter()
    pm = pair_motion_comparison(theta, dataset, TrainConfig().guidance,
                                SamplerConfig(), args.pair_trials, seed=7, pool=pool)
    print(f"pair motion ({time.perf_counter()-t0:.0f}s): "
          f"onestep {np.mean(pm['motion_alignment_onestep']):.4f} vs "
          f"fullsampling {np.mean(pm['motion_alignment_fullsampling']):.4f}")

    sampler = SamplerConfig()
    for seed in args.seeds:
        for mode in args.modes:
            cfg = TrainConfig(steps=args.adapter_steps, mode=mode, seed=seed,
                              lr=args.lr, train_styles=pool)
            t0 = time.perf_counter()
            result = train_adapter(theta, bcfg, dataset, cfg)
            train_s = time.perf_counter() - t0
            vals = evaluate_propagation(
                theta, result.phi, dataset, sampler, 1000 + seed,
                pool, eval_cfg.holdout_styles, args.eval_samples,
            )
            prop = np.array(vals["style_alignment"])
            src = np.array(vals["style_alignment_source"])
            mot = np.array(vals["motion_alignment"])
            print(f"seed {seed} {mode:>13}: loss {np.mean(result.loss_trace[-50:]):.4f} "
                  f"({train_s:.0f}s) | style {prop.mean():.4f} vs source {src.mean():.4f} "
                  f"| beats-source {(prop > src).mean()*100:.0f}% | motion {mot.mean():.3f}")


if __name__ == "__main__":
    main()

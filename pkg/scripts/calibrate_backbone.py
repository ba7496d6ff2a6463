#!/usr/bin/env python3
"""Backbone quality vs. pretraining budget.

Reports, per step budget: final flow-matching loss, the CFG margin, the
motion-channel share of the conditional/unconditional velocity gap,
backbone-only generation quality under a styled caption, and the pair
motion-alignment contrast that the one-step-vs-full-sampling ablation
depends on.
"""

import argparse
import dataclasses
import time

import numpy as np

from flowprop import autodiff as ad
from flowprop.ablations import pair_motion_comparison, train_style_pool, EvalConfig
from flowprop.backbone import BackboneConfig, PretrainConfig, pretrain, velocity
from flowprop.gmfm import TrainConfig
from flowprop.metrics import style_alignment
from flowprop.optim import AdamWConfig
from flowprop.rng import rng_for
from flowprop.sampler import SamplerConfig, ode_sample
from flowprop.synthvid import ConditionCode, NULL_CODE, SyntheticDataset


def motion_gap_share(theta, dataset, n=100, seed=0):
    rng = rng_for(seed, "gap-share")
    shares = []
    with ad.no_grad():
        for _ in range(n):
            [(x0, code)] = dataset.sample_batch(rng, 1, 1.0)
            t = float(rng.uniform(0.02, 0.98))
            x_t = (1 - t) * x0 + t * rng.standard_normal(x0.shape)
            d = velocity(theta, x_t, t, code).data - velocity(theta, x_t, t, NULL_CODE).data
            shares.append(np.linalg.norm(d[:, :2]) / np.linalg.norm(d))
    return float(np.mean(shares))


def backbone_generation_quality(theta, dataset, n=32, seed=0, n_steps=25):
    """ODE-sample with styled captions; compare appearance to the condition
    mean (base + style embedding)."""
    rng = rng_for(seed, "gen-quality")
    fn = lambda x, t, c: velocity(theta, x, t, c).data
    cfg = SamplerConfig(n_steps=n_steps, omega=1.0)
    scores = []
    with ad.no_grad():
        for _ in range(n):
            content = int(rng.integers(dataset.config.n_contents))
            style = int(rng.integers(dataset.config.n_styles))
            code = ConditionCode(content, style)
            noise = rng.standard_normal((dataset.config.n_frames, dataset.config.latent_dim))
            sample = ode_sample(fn, noise, code, cfg)
            target = np.zeros_like(sample)
            target[:, 2:] = dataset.content_bases[content] + dataset.styles.embedding(style)
            scores.append(style_alignment(sample, target))
    return float(np.mean(scores))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--budgets", type=int, nargs="+", default=[2000, 6000])
    ap.add_argument("--lr", type=float, default=5e-3)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--pair-trials", type=int, default=120)
    args = ap.parse_args()

    dataset = SyntheticDataset()
    pool = train_style_pool(dataset, EvalConfig())
    for steps in args.budgets:
        pcfg = PretrainConfig(steps=steps, batch_size=args.batch_size,
                              optimizer=AdamWConfig(lr=args.lr, weight_decay=0.0))
        t0 = time.perf_counter()
        pre = pretrain(BackboneConfig(), dataset, steps, pcfg, seed=100)
        took = time.perf_counter() - t0
        theta = pre.params
        share = motion_gap_share(theta, dataset)
        gen = backbone_generation_quality(theta, dataset)
        pm = pair_motion_comparison(theta, dataset, TrainConfig().guidance,
                                    SamplerConfig(), args.pair_trials, seed=7, pool=pool)
        one = np.mean(pm["motion_alignment_onestep"])
        full = np.mean(pm["motion_alignment_fullsampling"])
        print(f"steps={steps} ({took:.0f}s): loss={np.mean(pre.loss_trace[-100:]):.4f} "
              f"margin={pre.cfg_margin:.2f} motion_share={share:.3f} "
              f"gen_style={gen:.4f} pair_motion one={one:.4f} full={full:.4f}")


if __name__ == "__main__":
    main()

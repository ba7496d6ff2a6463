#!/usr/bin/env python3
"""Measure backbone quality against the closed-form Gaussian oracle.

Pretrains in Gaussian toy mode and reports the mean relative velocity
error over fresh draws, the quantity gating the oracle-match acceptance
criterion.
"""

import argparse
import time

import numpy as np

from flowprop import autodiff as ad
from flowprop.backbone import BackboneConfig, PretrainConfig, pretrain, velocity
from flowprop.guidance import gaussian_velocity_oracle
from flowprop.rng import rng_for
from flowprop.synthvid import SynthConfig, SyntheticDataset


def oracle_relative_error(theta, dataset, n_draws, seed, t_clamp=0.02):
    rng = rng_for(seed, "oracle-eval")
    errs = []
    with ad.no_grad():
        for _ in range(n_draws):
            [(x0, code)] = dataset.sample_batch(rng, 1, 0.5)
            t = float(rng.uniform(t_clamp, 1.0 - t_clamp))
            x1 = rng.standard_normal(x0.shape)
            x_t = (1.0 - t) * x0 + t * x1
            v_hat = velocity(theta, x_t, t, code).data
            v_star = gaussian_velocity_oracle(
                dataset.mu0_for(code), dataset.config.toy_sigma0, x_t, t
            )
            errs.append(np.linalg.norm(v_hat - v_star) / np.linalg.norm(v_star))
    return float(np.mean(errs)), errs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--draws", type=int, default=1000)
    args = ap.parse_args()

    dataset = SyntheticDataset(SynthConfig(gaussian_toy=True))
    config = BackboneConfig()
    pcfg = PretrainConfig(
        steps=args.steps, batch_size=args.batch_size, enforce_cfg_margin=False
    )
    import dataclasses

    pcfg = dataclasses.replace(
        pcfg, optimizer=dataclasses.replace(pcfg.optimizer, lr=args.lr)
    )
    t0 = time.perf_counter()
    result = pretrain(config, dataset, args.steps, pcfg, args.seed)
    train_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    mean_err, errs = oracle_relative_error(result.params, dataset, args.draws, args.seed)
    eval_s = time.perf_counter() - t0
    print(f"steps={args.steps} batch={args.batch_size} lr={args.lr}")
    print(f"train {train_s:.1f}s, eval {eval_s:.1f}s")
    print(f"loss first100={np.mean(result.loss_trace[:100]):.4f} "
          f"last100={np.mean(result.loss_trace[-100:]):.4f}")
    print(f"mean relative velocity error over {args.draws} draws: {mean_err:.4f}")
    print(f"p90={np.percentile(errs, 90):.4f} max={np.max(errs):.4f}")
    print(f"cfg margin: {result.cfg_margin:.4f}")


if __name__ == "__main__":
    main()

"""Acceptance gate: one test per criterion, one printed PASS/FAIL line each.

Heavy artifacts (the pretrained backbones, the trained adapters) are
session fixtures shared across criteria. Run with `-s` to watch the
per-criterion lines appear; every tolerance is pinned here, nothing is
deferred to later calibration.
"""

import dataclasses
import time

import numpy as np
import pytest

from flowprop import autodiff as ad
from flowprop.ablations import (
    EvalConfig,
    cfg_gap_sweep,
    evaluate_propagation,
    pair_motion_comparison,
    train_style_pool,
)
from flowprop.adapter import ConditionPack, init_adapter, joint_velocity
from flowprop.autodiff import Tape, Tensor, backward, grad_check
from flowprop.backbone import (
    BackboneConfig,
    PretrainConfig,
    fm_loss,
    init_backbone,
    interp_noise,
    pretrain,
    velocity,
)
from flowprop.cli import dispatch
from flowprop.checkpoint import file_hash
from flowprop.gmfm import TrainConfig, gmfm_loss, train_adapter
from flowprop.guidance import (
    GuidanceConfig,
    cfg_combine,
    estimate_clean,
    gaussian_velocity_oracle,
    gen_pair,
)
from flowprop.optim import AdamWConfig
from flowprop.rng import rng_for
from flowprop.sampler import SamplerConfig
from flowprop.synthvid import ConditionCode, NULL_CODE, SynthConfig, SyntheticDataset

EVAL = EvalConfig()
GMFM_SEEDS = (0, 1, 2)


def check(criterion: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {status} ({detail})")
    assert passed, f"criterion {criterion}: {detail}"


# -- criterion 1: autodiff soundness ------------------------------------


def test_criterion_1_autodiff_soundness():
    started = time.perf_counter()
    cfg = BackboneConfig(n_blocks=4, width=12, time_embed_dim=8, s_in=2)
    data_cfg = SynthConfig(n_frames=4, latent_dim=6, n_contents=3, n_styles=3)
    ds = SyntheticDataset(data_cfg)
    params = init_backbone(cfg, data_cfg, seed=1)
    batch = ds.sample_batch(rng_for(0, "acc1"), 2, 0.5)

    def fm(p):
        return fm_loss(p, batch, rng_for(1, "acc1"), p_drop=0.1)

    err_fm = grad_check(fm, params, h=1e-5)

    theta = init_backbone(cfg, data_cfg, seed=2)
    theta.freeze()
    phi = init_adapter(cfg, data_cfg, seed=3)
    rng = rng_for(2, "acc1")
    for k in range(cfg.n_blocks // cfg.s_in):
        w = phi[f"ablock{k}.inj.w"]
        w.data = 0.1 * rng.standard_normal(w.data.shape)
    x0, _ = ds.gen_sample(5, 1, None)
    c_aug = ConditionCode(1, 2)
    x_t = interp_noise(x0, rng.standard_normal(x0.shape), 0.5)
    pair = gen_pair(theta, x_t, 0.5, c_aug, GuidanceConfig())

    def gmfm(p):
        return gmfm_loss(theta, p, pair)

    err_gmfm = grad_check(gmfm, phi, h=1e-5)
    wall = time.perf_counter() - started
    check(
        1,
        err_fm < 1e-4 and err_gmfm < 1e-4 and wall < 30.0,
        f"fm grad err {err_fm:.2e}, gmfm grad err {err_gmfm:.2e}, {wall:.1f}s",
    )


# -- criterion 2: one-step exactness ------------------------------------


def test_criterion_2_one_step_exactness():
    rng = rng_for(0, "acc2")
    x0 = rng.standard_normal((8, 16))
    x1 = rng.standard_normal((8, 16))
    v = x1 - x0
    worst = 0.0
    for t in np.linspace(0.0, 1.0, 101):
        back = estimate_clean(interp_noise(x0, x1, float(t)), float(t), v)
        worst = max(worst, float(np.max(np.abs(back - x0))))
    check(2, worst <= 1e-12, f"max |estimate - x0| = {worst:.2e} over 101-point grid")


# -- criterion 3: CFG algebra -------------------------------------------


def test_criterion_3_cfg_algebra(dataset):
    small = BackboneConfig(n_blocks=2, width=24, time_embed_dim=8)
    theta = init_backbone(small, dataset.config, seed=4)
    theta.freeze()
    rng = rng_for(1, "acc3")
    worst_endpoint = 0.0
    worst_affine = 0.0
    worst_gap = 0.0
    for _ in range(100):
        u = rng.standard_normal((8, 16))
        c = rng.standard_normal((8, 16))
        worst_endpoint = max(
            worst_endpoint,
            float(np.max(np.abs(cfg_combine(u, c, 0.0) - u))),
            float(np.max(np.abs(cfg_combine(u, c, 1.0) - c))),
        )
        a, b = sorted(rng.uniform(0.0, 20.0, size=2))
        mid = cfg_combine(u, c, (a + b) / 2.0)
        avg = (cfg_combine(u, c, a) + cfg_combine(u, c, b)) / 2.0
        worst_affine = max(worst_affine, float(np.max(np.abs(mid - avg))))

        content = int(rng.integers(dataset.config.n_contents))
        style = int(rng.integers(dataset.config.n_styles))
        x0, _ = dataset.gen_sample(int(rng.integers(2**31)), content, None)
        t = float(rng.uniform(0.02, 0.98))
        x_t = interp_noise(x0, rng.standard_normal(x0.shape), t)
        cfg = GuidanceConfig(1.0, float(rng.uniform(2.0, 20.0)))
        pair = gen_pair(theta, x_t, t, ConditionCode(content, style), cfg)
        vc = velocity(theta, x_t, t, ConditionCode(content, style)).data
        vu = velocity(theta, x_t, t, NULL_CODE).data
        expect = -t * (cfg.omega_high - cfg.omega_low) * (vc - vu)
        worst_gap = max(worst_gap, float(np.max(np.abs(pair.x_high - pair.x_low - expect))))
    ok = worst_endpoint == 0.0 and worst_affine < 1e-10 and worst_gap < 1e-10
    check(3, ok, f"endpoint {worst_endpoint:.1e}, affine {worst_affine:.1e}, "
                 f"gap {worst_gap:.1e} over 100 cases")


# -- criterion 4: oracle match ------------------------------------------


def test_criterion_4_oracle_match(toy_backbone, toy_dataset):
    started = time.perf_counter()
    rng = rng_for(0, "acc4")
    errs = []
    with ad.no_grad():
        for _ in range(1000):
            [(x0, code)] = toy_dataset.sample_batch(rng, 1, 0.5)
            t = float(rng.uniform(0.02, 0.98))
            x1 = rng.standard_normal(x0.shape)
            x_t = interp_noise(x0, x1, t)
            v_hat = velocity(toy_backbone.params, x_t, t, code).data
            v_star = gaussian_velocity_oracle(
                toy_dataset.mu0_for(code), toy_dataset.config.toy_sigma0, x_t, t
            )
            errs.append(np.linalg.norm(v_hat - v_star) / np.linalg.norm(v_star))
    mean_err = float(np.mean(errs))
    wall = toy_backbone.wall_s + (time.perf_counter() - started)
    check(4, mean_err < 0.15 and wall < 180.0,
          f"mean rel velocity err {mean_err:.4f} over 1000 draws, {wall:.0f}s total")


# -- criterion 5: identity at init + stop-gradient ----------------------


def test_criterion_5_identity_at_init(dataset):
    cfg = BackboneConfig()
    theta = init_backbone(cfg, dataset.config, seed=6)
    theta.freeze()
    phi = init_adapter(cfg, dataset.config, seed=7)
    x0, _ = dataset.gen_sample(8, 2, None)
    c_aug = ConditionCode(2, 5)
    rng = rng_for(2, "acc5")
    x_t = interp_noise(x0, rng.standard_normal(x0.shape), 0.6)
    pack = ConditionPack(source=x0, edited_first=x0[0] + 0.25, caption=c_aug)
    jv = joint_velocity(theta, phi, x_t, 0.6, c_aug, pack)
    bv = velocity(theta, x_t, 0.6, c_aug)
    bit_equal = np.array_equal(jv.data, bv.data)

    pair = gen_pair(theta, x_t, 0.6, c_aug, GuidanceConfig())
    phi.zero_grad()
    with Tape():
        backward(gmfm_loss(theta, phi, pair))
    theta_clean = all(t.grad is None for t in theta.tensors())
    check(5, bit_equal and theta_clean,
          f"joint==backbone bitwise: {bit_equal}, theta grads zero: {theta_clean}")


# -- criterion 6: end-to-end propagation --------------------------------


def test_criterion_6_end_to_end_propagation(main_backbone, dataset, style_pool, gmfm_adapter):
    started = time.perf_counter()
    vals = evaluate_propagation(
        main_backbone, gmfm_adapter.phi, dataset, SamplerConfig(), 500,
        style_pool, EVAL.holdout_styles, 64,
    )
    prop = np.array(vals["style_alignment"])
    src = np.array(vals["style_alignment_source"])
    beat = float(np.mean(prop > src))
    wall = gmfm_adapter.wall_s + (time.perf_counter() - started)
    check(6, beat >= 0.90 and wall < 300.0,
          f"propagated beats source on {beat*100:.0f}% of 64 held-out edits "
          f"(style {prop.mean():.3f} vs source {src.mean():.3f}), {wall:.0f}s")


# -- criterion 7: GMFM vs standard FM -----------------------------------


def test_criterion_7_gmfm_vs_standard_fm(main_backbone, dataset, style_pool, contrast_adapters):
    started = time.perf_counter()
    directions = []
    detail = []
    for seed in GMFM_SEEDS:
        scores = {}
        for mode in ("gmfm", "standard_fm"):
            vals = evaluate_propagation(
                main_backbone, contrast_adapters[(seed, mode)].phi, dataset, SamplerConfig(),
                600 + seed, style_pool, EVAL.holdout_styles, EVAL.eval_samples,
            )
            scores[mode] = float(np.mean(vals["style_alignment"]))
        directions.append(scores["gmfm"] > scores["standard_fm"])
        detail.append(f"seed{seed} {scores['gmfm']:.3f}>{scores['standard_fm']:.3f}")
    wall = time.perf_counter() - started
    check(7, all(directions), "; ".join(detail) + f" ({wall:.0f}s eval)")


# -- criterion 8: one-step vs full sampling -----------------------------


def test_criterion_8_onestep_vs_fullsampling(main_backbone, dataset, style_pool):
    started = time.perf_counter()
    pm = pair_motion_comparison(
        main_backbone, dataset, GuidanceConfig(), SamplerConfig(), 200, seed=7,
        pool=style_pool,
    )
    one = float(np.mean(pm["motion_alignment_onestep"]))
    full = float(np.mean(pm["motion_alignment_fullsampling"]))
    wall = time.perf_counter() - started
    check(8, one >= full and wall < 120.0,
          f"one-step {one:.4f} >= full-sampling {full:.4f} over 200 trials, {wall:.0f}s")


# -- criterion 9: CFG sweep linearity -----------------------------------


def test_criterion_9_cfg_sweep_linearity(main_backbone, dataset, style_pool):
    sweep = cfg_gap_sweep(main_backbone, dataset, 1.0, EVAL.omega_sweep, 50, seed=9,
                          pool=style_pool)
    residual = sweep["max_residual"]
    check(9, residual < 1e-9,
          f"max through-origin residual {residual:.2e} over 50 shared-eval draws")


# -- criterion 10: RSPF generalization ----------------------------------


def test_criterion_10_rspf_generalization(main_backbone, dataset, style_pool, contrast_adapters):
    directions = []
    detail = []
    for seed in GMFM_SEEDS:
        scores = {}
        for mode in ("gmfm", "gmfm_no_rspf"):
            vals = evaluate_propagation(
                main_backbone, contrast_adapters[(seed, mode)].phi, dataset, SamplerConfig(),
                700 + seed, style_pool, EVAL.holdout_styles, EVAL.eval_samples,
            )
            scores[mode] = float(np.mean(vals["style_alignment"]))
        directions.append(scores["gmfm"] > scores["gmfm_no_rspf"])
        detail.append(f"seed{seed} {scores['gmfm']:.3f}>{scores['gmfm_no_rspf']:.3f}")
    check(10, all(directions), "; ".join(detail))


# -- criterion 11: reproducibility --------------------------------------


def test_criterion_11_reproducibility(tmp_path):
    fast = [
        "--set", "pretrain.steps=300",
        "--set", "pretrain.batch_size=8",
        "--set", "train.steps=300",
        "--set", "eval.eval_samples=16",
    ]

    def pipeline(out):
        for cmd in (["pretrain"], ["train-adapter"], ["eval"]):
            rc = dispatch(cmd + ["--out-dir", out, "--seed", "42"] + fast)
            assert rc == 0, f"{cmd[0]} failed"

    pipeline(str(tmp_path / "a"))
    pipeline(str(tmp_path / "b"))

    identical = True
    compared = []
    for name in ("backbone.pfly", "adapter.pfly", "pretrain_loss.csv",
                 "adapter_loss.csv", "eval_metrics.csv"):
        ha = file_hash(tmp_path / "a" / name)
        hb = file_hash(tmp_path / "b" / name)
        compared.append(name)
        if ha != hb:
            identical = False
    check(11, identical,
          f"byte-identical across two runs: {', '.join(compared)}")

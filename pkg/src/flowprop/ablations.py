"""Edit-propagation inference and the experiment suites.

The held-out protocol reserves a fixed subset of style ids from all
adapter training; evaluation edits always target a reserved style, so
every suite measures generalization rather than memorization.

Suites:
  cfg_sweep                 gap statistics across the high guidance scale
                            grid on shared velocity evaluations, plus one
                            trained adapter per scale when a step budget
                            is given.
  fullsampling_vs_onestep   motion alignment of pairs built by two
                            independent partial ODE solves vs. pairs from
                            the one-step estimate, plus optional
                            downstream adapters trained on each.
  fm_vs_gmfm                guidance-modulated training vs. the plain
                            flow-matching baseline at equal budget.
  rspf                      style fusion on vs. off at equal budget.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .adapter import ConditionPack, init_adapter, joint_velocity
from .autodiff import ParamStore, Tape, Tensor, backward
from .backbone import BackboneConfig, interp_noise, velocity
from .errors import ConfigError, ContractError
from .gmfm import TrainConfig, train_adapter
from .guidance import GuidanceConfig, PairSample, cfg_combine, estimate_clean, gen_pair
from .metrics import MetricReport, motion_alignment, semantic_gap, style_alignment
from .optim import AdamW
from .rng import child_seed, rng_for
from .sampler import SamplerConfig, partial_sample, ode_sample
from .synthvid import ConditionCode, SyntheticDataset

SUITES = ("cfg_sweep", "fullsampling_vs_onestep", "fm_vs_gmfm", "rspf")


@dataclass(frozen=True)
class EvalConfig:
    eval_samples: int = 64
    pair_trials: int = 200
    holdout_styles: tuple[int, ...] = (12, 13, 14, 15)
    omega_sweep: tuple[float, ...] = (2.0, 5.0, 7.0, 10.0, 20.0)


def train_style_pool(dataset: SyntheticDataset, eval_config: EvalConfig) -> tuple[int, ...]:
    held = set(eval_config.holdout_styles)
    return tuple(s for s in range(dataset.config.n_styles) if s not in held)


def stable_hash(*objs) -> str:
    """Deterministic 16-hex digest of dataclass/config reprs."""
    h = hashlib.sha256()
    for o in objs:
        h.update(repr(o).encode("utf-8"))
    return h.hexdigest()[:16]


# -- inference ---------------------------------------------------------


def propagation_velocity_fn(theta: ParamStore, phi: ParamStore, pack: ConditionPack):
    """Joint-velocity closure for the ODE sampler (caption-conditional only)."""

    def fn(x, t, c):
        if c.is_null:
            raise ContractError(
                "propagation runs at guidance scale 1; no unconditional branch"
            )
        with ad.no_grad():
            return joint_velocity(theta, phi, x, t, c, pack).data

    return fn


def propagate(
    theta: ParamStore,
    phi: ParamStore,
    pack: ConditionPack,
    noise: np.ndarray,
    config: SamplerConfig,
) -> np.ndarray:
    """Generate the edited video latent from noise, conditioned on the pack."""
    if config.omega != 1.0:
        raise ConfigError("propagation inference uses a single guidance scale of 1.0")
    return ode_sample(
        propagation_velocity_fn(theta, phi, pack), noise, pack.caption, config
    )


def evaluate_propagation(
    theta: ParamStore,
    phi: ParamStore,
    dataset: SyntheticDataset,
    sampler_config: SamplerConfig,
    seed: int,
    from_pool: tuple[int, ...],
    to_pool: tuple[int, ...],
    n_samples: int,
    tag: str = "",
) -> dict[str, list[float]]:
    """Propagate held-out edits and score them against the analytic oracle.

    Returns per-sample lists: the propagated result's style alignment, the
    unedited source's style alignment (the bar to clear), and the motion
    alignment between propagation and source.
    """
    suffix = f"_{tag}" if tag else ""
    out: dict[str, list[float]] = {
        f"style_alignment{suffix}": [],
        f"style_alignment_source{suffix}": [],
        f"motion_alignment{suffix}": [],
    }
    for i in range(n_samples):
        rng = rng_for(seed, "eval-propagation", i)
        content = int(rng.integers(dataset.config.n_contents))
        a = from_pool[int(rng.integers(len(from_pool)))]
        b = to_pool[int(rng.integers(len(to_pool)))]
        source, _ = dataset.gen_sample(child_seed(rng), content, a)
        target = dataset.oracle_edit(source, a, b)
        caption = ConditionCode(content, b)
        pack = ConditionPack(source=source, edited_first=target[0], caption=caption)
        noise = rng.standard_normal(source.shape)
        edited = propagate(theta, phi, pack, noise, sampler_config)
        out[f"style_alignment{suffix}"].append(style_alignment(edited, target))
        out[f"style_alignment_source{suffix}"].append(style_alignment(source, target))
        out[f"motion_alignment{suffix}"].append(motion_alignment(edited, source))
    return out


# -- pair construction helpers ----------------------------------------


def _draw_pair_inputs(dataset, pool, guidance_unused, rng, t_clamp=0.02):
    content = int(rng.integers(dataset.config.n_contents))
    style = pool[int(rng.integers(len(pool)))]
    x0, caption = dataset.gen_sample(child_seed(rng), content, None)
    c_aug = dataclasses.replace(caption, style_id=style)
    t = float(rng.uniform(t_clamp, 1.0 - t_clamp))
    x1 = rng.standard_normal(x0.shape)
    x_t = interp_noise(x0, x1, t)
    return x_t, t, c_aug


def cfg_gap_sweep(
    theta: ParamStore,
    dataset: SyntheticDataset,
    omega_low: float,
    omegas: tuple[float, ...],
    n_draws: int,
    seed: int,
    pool: tuple[int, ...] | None = None,
) -> dict:
    """Semantic gap across the high-scale grid, reusing one conditional and
    one unconditional velocity evaluation per draw.

    Per draw the five gaps are linear through the origin in
    (omega_high - omega_low); the returned max_residual is the worst
    deviation from the per-draw least-squares line.
    """
    pool = pool or tuple(range(dataset.config.n_styles))
    gaps = {w: [] for w in omegas}
    max_residual = 0.0
    slopes = []
    for i in range(n_draws):
        rng = rng_for(seed, "cfg-gap-sweep", i)
        x_t, t, c_aug = _draw_pair_inputs(dataset, pool, None, rng)
        with ad.no_grad():
            v_cond = velocity(theta, x_t, t, c_aug).data
            v_uncond = velocity(theta, x_t, t, ConditionCode.null()).data
        v_low = cfg_combine(v_uncond, v_cond, omega_low)
        x_low = estimate_clean(x_t, t, v_low)
        us, gs = [], []
        for w in omegas:
            v_high = cfg_combine(v_uncond, v_cond, w)
            pair = PairSample(
                x_t=x_t, t=t, c_aug=c_aug,
                x_low=x_low, x_high=estimate_clean(x_t, t, v_high), v_high=v_high,
            )
            g = semantic_gap(pair)
            gaps[w].append(g)
            us.append(w - omega_low)
            gs.append(g)
        us, gs = np.asarray(us), np.asarray(gs)
        slope = float(np.dot(us, gs) / np.dot(us, us))
        slopes.append(slope)
        max_residual = max(max_residual, float(np.max(np.abs(gs - slope * us))))
    return {"gaps": gaps, "slopes": slopes, "max_residual": max_residual}


def pair_motion_comparison(
    theta: ParamStore,
    dataset: SyntheticDataset,
    guidance: GuidanceConfig,
    sampler_config: SamplerConfig,
    n_trials: int,
    seed: int,
    pool: tuple[int, ...] | None = None,
) -> dict[str, list[float]]:
    """Motion alignment of one-step pairs vs. independently integrated pairs."""
    pool = pool or tuple(range(dataset.config.n_styles))

    def vfn(x, t, c):
        with ad.no_grad():
            return velocity(theta, x, t, c).data

    onestep, fullsampling = [], []
    for i in range(n_trials):
        rng = rng_for(seed, "pair-motion", i)
        x_t, t, c_aug = _draw_pair_inputs(dataset, pool, guidance, rng)
        pair = gen_pair(theta, x_t, t, c_aug, guidance)
        onestep.append(motion_alignment(pair.x_low, pair.x_high))
        low_cfg = dataclasses.replace(sampler_config, omega=guidance.omega_low)
        high_cfg = dataclasses.replace(sampler_config, omega=guidance.omega_high)
        full_low = partial_sample(vfn, x_t, t, c_aug, low_cfg)
        full_high = partial_sample(vfn, x_t, t, c_aug, high_cfg)
        fullsampling.append(motion_alignment(full_low, full_high))
    return {
        "motion_alignment_onestep": onestep,
        "motion_alignment_fullsampling": fullsampling,
    }


def _train_on_full_pairs(
    theta: ParamStore,
    backbone_config: BackboneConfig,
    dataset: SyntheticDataset,
    config: TrainConfig,
    sampler_config: SamplerConfig,
) -> ParamStore:
    """Adapter trained on pairs produced by the iterative solver instead of
    the one-step estimate; supervision is the pair's interpolation velocity."""
    pool = config.train_styles or tuple(range(dataset.config.n_styles))

    def vfn(x, t, c):
        with ad.no_grad():
            return velocity(theta, x, t, c).data

    phi = init_adapter(backbone_config, dataset.config, config.seed)
    opt = AdamW(phi, config.optimizer())
    for step in range(config.steps):
        rng = rng_for(config.seed, "adapter-step-fullsampling", step)
        opt.zero_grad()
        with Tape():
            total = None
            for _ in range(config.batch_size):
                x_t, t, c_aug = _draw_pair_inputs(
                    dataset, pool, config.guidance, rng, config.t_clamp
                )
                low_cfg = dataclasses.replace(sampler_config, omega=config.guidance.omega_low)
                high_cfg = dataclasses.replace(sampler_config, omega=config.guidance.omega_high)
                x_low = partial_sample(vfn, x_t, t, c_aug, low_cfg)
                x_high = partial_sample(vfn, x_t, t, c_aug, high_cfg)
                t_new = float(rng.uniform(config.t_clamp, 1.0 - config.t_clamp))
                x1_new = rng.standard_normal(x_low.shape)
                x_t_new = interp_noise(x_high, x1_new, t_new)
                pack = ConditionPack(source=x_low, edited_first=x_high[0], caption=c_aug)
                pred = joint_velocity(theta, phi, x_t_new, t_new, c_aug, pack)
                li = ad.mse(pred, Tensor(x1_new - x_high))
                total = li if total is None else ad.add(total, li)
            backward(ad.scale(total, 1.0 / config.batch_size))
        opt.step()
    return phi


# -- suites ------------------------------------------------------------


def run_ablation(
    suite: str,
    theta: ParamStore | None,
    backbone_config: BackboneConfig,
    dataset: SyntheticDataset,
    train_config: TrainConfig,
    eval_config: EvalConfig,
    sampler_config: SamplerConfig,
    seed: int,
) -> MetricReport:
    """Run one experiment suite against a pretrained frozen backbone."""
    if suite not in SUITES:
        raise ConfigError(f"suite must be one of {SUITES}, got {suite!r}")
    if theta is None:
        raise FileNotFoundError("ablation suites need a pretrained backbone checkpoint")
    pool = train_style_pool(dataset, eval_config)
    cfg_hash = stable_hash(
        suite, backbone_config, dataset.config, train_config, eval_config, sampler_config
    )
    report = MetricReport(experiment=suite, seed=seed, config_hash=cfg_hash)
    base = dataclasses.replace(train_config, seed=seed, train_styles=pool)
    infer = dataclasses.replace(sampler_config, omega=1.0)

    def record_all(values: dict[str, list[float]]):
        for metric, vs in values.items():
            for v in vs:
                report.record(metric, v)

    if suite == "cfg_sweep":
        sweep = cfg_gap_sweep(
            theta, dataset, train_config.guidance.omega_low,
            eval_config.omega_sweep, eval_config.pair_trials, seed, pool,
        )
        for w, gs in sweep["gaps"].items():
            for g in gs:
                report.record(f"semantic_gap_w{w:g}", g)
        report.record("gap_fit_max_residual", sweep["max_residual"])
        if base.steps > 0:
            for w in eval_config.omega_sweep:
                cfg_w = dataclasses.replace(
                    base, guidance=dataclasses.replace(base.guidance, omega_high=float(w))
                )
                result = train_adapter(theta, backbone_config, dataset, cfg_w)
                record_all(evaluate_propagation(
                    theta, result.phi, dataset, infer, seed,
                    pool, eval_config.holdout_styles, eval_config.eval_samples,
                    tag=f"w{w:g}",
                ))

    elif suite == "fullsampling_vs_onestep":
        record_all(pair_motion_comparison(
            theta, dataset, train_config.guidance, sampler_config,
            eval_config.pair_trials, seed, pool,
        ))
        if base.steps > 0:
            onestep = train_adapter(theta, backbone_config, dataset, base)
            full_phi = _train_on_full_pairs(
                theta, backbone_config, dataset, base, sampler_config
            )
            record_all(evaluate_propagation(
                theta, onestep.phi, dataset, infer, seed,
                pool, eval_config.holdout_styles, eval_config.eval_samples,
                tag="onestep",
            ))
            record_all(evaluate_propagation(
                theta, full_phi, dataset, infer, seed,
                pool, eval_config.holdout_styles, eval_config.eval_samples,
                tag="fullsampling",
            ))

    elif suite == "fm_vs_gmfm":
        for mode, tag in (("gmfm", "gmfm"), ("standard_fm", "standard_fm")):
            result = train_adapter(
                theta, backbone_config, dataset, dataclasses.replace(base, mode=mode)
            )
            record_all(evaluate_propagation(
                theta, result.phi, dataset, infer, seed,
                pool, eval_config.holdout_styles, eval_config.eval_samples, tag=tag,
            ))

    elif suite == "rspf":
        for mode, tag in (("gmfm", "rspf"), ("gmfm_no_rspf", "no_rspf")):
            result = train_adapter(
                theta, backbone_config, dataset, dataclasses.replace(base, mode=mode)
            )
            record_all(evaluate_propagation(
                theta, result.phi, dataset, infer, seed,
                pool, eval_config.holdout_styles, eval_config.eval_samples, tag=tag,
            ))

    return report

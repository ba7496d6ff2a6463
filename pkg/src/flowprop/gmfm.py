"""Adapter training: the guidance-modulated loss, the main loop, and the
two supervision baselines used by the ablations.

One training step, in order: sample an unstyled video and its caption;
with some probability fuse a random style id into the caption; draw a
time and a noise latent and interpolate; build the on-the-fly pair from
the frozen backbone; regress the joint velocity (conditioned on the pair's
source latent and edited first frame, at the very same noised latent)
onto the pair's high-guidance velocity; take one optimizer step on the
adapter. The backbone never receives gradients.

Baselines:
  standard_fm     re-noises the pair's target latent with fresh (t', x1')
                  and trains with the plain flow-matching objective.
  paired_dataset  swaps the on-the-fly pair for an analytic-oracle edit
                  pair and regresses onto that pair's interpolation
                  velocity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Tensor, backward
from .adapter import ConditionPack, init_adapter, joint_velocity
from .backbone import BackboneConfig, interp_noise
from .errors import ConfigError, ContractError, NumericsError
from .guidance import GuidanceConfig, PairSample, gen_pair
from .optim import AdamW, AdamWConfig
from .rng import child_seed, rng_for
from .synthvid import ConditionCode, SyntheticDataset

MODES = ("gmfm", "standard_fm", "paired_dataset", "gmfm_no_rspf")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    weight_decay: float = 0.01
    style_fusion_prob: float = 0.9
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    t_clamp: float = 0.02
    seed: int = 0
    mode: str = "gmfm"
    checkpoint_every: int = 0
    train_styles: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "gmfm_no_rspf" and self.style_fusion_prob != 0.0:
            object.__setattr__(self, "style_fusion_prob", 0.0)
        if not 0.0 <= self.style_fusion_prob <= 1.0:
            raise ConfigError(
                f"style_fusion_prob must be in [0, 1], got {self.style_fusion_prob}"
            )
        if not 0.0 <= self.t_clamp < 0.5:
            raise ConfigError(f"t_clamp must be in [0, 0.5), got {self.t_clamp}")

    def optimizer(self) -> AdamWConfig:
        return AdamWConfig(lr=self.lr, weight_decay=self.weight_decay)


def rspf_fuse(caption: ConditionCode, style_id: int) -> ConditionCode:
    """Fuse a style id into a caption; refusing on an existing style would
    lose draws, so last fusion wins."""
    if caption.is_null:
        raise ContractError("cannot fuse a style into the null caption")
    return dataclasses.replace(caption, style_id=style_id)


def _as_constant(arr, what: str) -> Tensor:
    if isinstance(arr, Tensor):
        if arr.requires_grad or arr._from_op:
            raise ContractError(f"{what} must be detached from the gradient graph")
        return arr
    return Tensor(arr)


def gmfm_loss(theta: ParamStore, phi: ParamStore, pair: PairSample) -> Tensor:
    """MSE between the joint velocity at the pair's own x_t and the pair's
    (stop-gradient) high-guidance velocity."""
    target = _as_constant(pair.v_high, "pair.v_high")
    pack = ConditionPack(
        source=pair.x_low,
        edited_first=pair.x_high[0],
        caption=pair.c_aug,
    )
    pred = joint_velocity(theta, phi, pair.x_t, pair.t, pair.c_aug, pack)
    return ad.mse(pred, target)


def _draw_caption(
    dataset: SyntheticDataset, config: TrainConfig, rng: np.random.Generator
) -> tuple[np.ndarray, ConditionCode]:
    """Alg. step 1: unstyled video plus (possibly style-fused) caption."""
    content = int(rng.integers(dataset.config.n_contents))
    x0, caption = dataset.gen_sample(child_seed(rng), content, None)
    if rng.random() < config.style_fusion_prob:
        pool = config.train_styles or tuple(range(dataset.config.n_styles))
        caption = rspf_fuse(caption, pool[int(rng.integers(len(pool)))])
    return x0, caption


def _draw_t(config: TrainConfig, rng: np.random.Generator) -> float:
    return float(rng.uniform(config.t_clamp, 1.0 - config.t_clamp))


def _item_loss_gmfm(theta, phi, dataset, config, rng) -> Tensor:
    x0, c_aug = _draw_caption(dataset, config, rng)
    t = _draw_t(config, rng)
    x1 = rng.standard_normal(x0.shape)
    x_t = interp_noise(x0, x1, t)
    pair = gen_pair(theta, x_t, t, c_aug, config.guidance)
    return gmfm_loss(theta, phi, pair)


def _item_loss_standard_fm(theta, phi, dataset, config, rng) -> Tensor:
    x0, c_aug = _draw_caption(dataset, config, rng)
    t = _draw_t(config, rng)
    x1 = rng.standard_normal(x0.shape)
    x_t = interp_noise(x0, x1, t)
    pair = gen_pair(theta, x_t, t, c_aug, config.guidance)
    # Fresh noise and time; the target latent is re-noised from scratch.
    t_new = _draw_t(config, rng)
    x1_new = rng.standard_normal(x0.shape)
    x_t_new = interp_noise(pair.x_high, x1_new, t_new)
    pack = ConditionPack(source=pair.x_low, edited_first=pair.x_high[0], caption=c_aug)
    pred = joint_velocity(theta, phi, x_t_new, t_new, c_aug, pack)
    return ad.mse(pred, Tensor(x1_new - pair.x_high))


def _item_loss_paired(theta, phi, dataset, config, rng) -> Tensor:
    pool = config.train_styles or tuple(range(dataset.config.n_styles))
    content = int(rng.integers(dataset.config.n_contents))
    from_style = pool[int(rng.integers(len(pool)))]
    to_style = pool[int(rng.integers(len(pool)))]
    source, _ = dataset.gen_sample(child_seed(rng), content, from_style)
    target = dataset.oracle_edit(source, from_style, to_style)
    caption = ConditionCode(content, to_style)
    t = _draw_t(config, rng)
    x1 = rng.standard_normal(source.shape)
    x_t = interp_noise(target, x1, t)
    pack = ConditionPack(source=source, edited_first=target[0], caption=caption)
    pred = joint_velocity(theta, phi, x_t, t, caption, pack)
    return ad.mse(pred, Tensor(x1 - target))


_ITEM_LOSS = {
    "gmfm": _item_loss_gmfm,
    "gmfm_no_rspf": _item_loss_gmfm,
    "standard_fm": _item_loss_standard_fm,
    "paired_dataset": _item_loss_paired,
}


def train_step(
    theta: ParamStore,
    phi: ParamStore,
    opt: AdamW,
    config: TrainConfig,
    rng: np.random.Generator,
    dataset: SyntheticDataset,
) -> float:
    """One optimizer update on phi; returns the batch loss value."""
    if not theta.frozen:
        raise ContractError("train_step requires a frozen backbone")
    item_loss = _ITEM_LOSS[config.mode]
    opt.zero_grad()
    with Tape():
        total = None
        for _ in range(config.batch_size):
            li = item_loss(theta, phi, dataset, config, rng)
            total = li if total is None else ad.add(total, li)
        loss = ad.scale(total, 1.0 / config.batch_size)
        value = loss.item()
        if np.isfinite(value):
            backward(loss)
    if not np.isfinite(value):
        raise NumericsError(f"non-finite adapter loss: {value}")
    opt.step()
    return value


def baseline_step(
    mode: str,
    theta: ParamStore,
    phi: ParamStore,
    opt: AdamW,
    config: TrainConfig,
    rng: np.random.Generator,
    dataset: SyntheticDataset,
) -> float:
    """train_step with the mode overridden to one of the baselines."""
    if mode not in ("standard_fm", "paired_dataset"):
        raise ConfigError(f"baseline mode must be standard_fm or paired_dataset, got {mode!r}")
    return train_step(theta, phi, opt, dataclasses.replace(config, mode=mode), rng, dataset)


@dataclass
class TrainResult:
    phi: ParamStore
    optimizer: AdamW
    loss_trace: list[float]


def train_adapter(
    theta: ParamStore,
    backbone_config: BackboneConfig,
    dataset: SyntheticDataset,
    config: TrainConfig,
    checkpoint_fn=None,
) -> TrainResult:
    """Run the full training loop for `config.steps` steps.

    `checkpoint_fn(step, phi, opt)` fires every `checkpoint_every` steps
    when set. Each step draws from its own counter-based stream, so traces
    are reproducible regardless of how many steps ran before.
    """
    phi = init_adapter(backbone_config, dataset.config, config.seed)
    opt = AdamW(phi, config.optimizer())
    trace = []
    for step in range(config.steps):
        rng = rng_for(config.seed, f"adapter-step-{config.mode}", step)
        try:
            value = train_step(theta, phi, opt, config, rng, dataset)
        except NumericsError as e:
            raise NumericsError(f"step {step}: {e}") from e
        trace.append(value)
        if (
            checkpoint_fn is not None
            and config.checkpoint_every > 0
            and (step + 1) % config.checkpoint_every == 0
        ):
            checkpoint_fn(step + 1, phi, opt)
    return TrainResult(phi=phi, optimizer=opt, loss_trace=trace)

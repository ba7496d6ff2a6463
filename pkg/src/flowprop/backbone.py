"""Conditional velocity network and its flow-matching pretraining.

The network maps an (F, D) noised latent, a time t and a condition code
to an (F, D) velocity. Structure: input affine to a hidden width, then
n_blocks residual blocks, each adding a projected (time, condition)
embedding, applying a two-layer gelu MLP per frame and a learned FxF
temporal mixing matrix, then an output affine back to D. Row-vector
broadcasts (biases, embeddings) are expressed as explicit ones-matmuls
because the autodiff layer only broadcasts against scalars.

After pretraining the parameter store is frozen; a frozen store never
accumulates gradients again.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Tensor, backward
from .errors import ConfigError, ContractError, NumericsError, RangeError
from .optim import AdamW, AdamWConfig
from .rng import child_seed, rng_for
from .synthvid import ConditionCode, NULL_CODE, SyntheticDataset

N_FOURIER_PAIRS = 8


@dataclass(frozen=True)
class BackboneConfig:
    n_blocks: int = 6
    width: int = 64
    time_embed_dim: int = 16
    s_in: int = 2

    def __post_init__(self):
        if self.n_blocks % self.s_in != 0:
            raise ConfigError(
                f"n_blocks={self.n_blocks} must be divisible by s_in={self.s_in}"
            )
        if self.width < 1 or self.time_embed_dim < 1:
            raise ConfigError("width and time_embed_dim must be positive")


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 2000
    batch_size: int = 16
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    p_drop: float = 0.1
    style_fusion_prob: float = 0.5
    t_clamp: float = 0.0
    enforce_cfg_margin: bool = True
    cfg_margin: float = 0.05
    cfg_margin_draws: int = 500


def _affine_init(rng, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)


def init_backbone(config: BackboneConfig, data_config, seed: int) -> ParamStore:
    """Fresh parameter store; `data_config` supplies F, D, C, S."""
    F, D = data_config.n_frames, data_config.latent_dim
    C, S = data_config.n_contents, data_config.n_styles
    W, E = config.width, config.time_embed_dim
    if W < D:
        raise ConfigError(f"width {W} must be >= latent dim {D}")
    rng = rng_for(seed, "backbone-init")

    params = ParamStore(
        meta={
            "n_blocks": config.n_blocks,
            "width": W,
            "time_embed_dim": E,
            "s_in": config.s_in,
            "n_frames": F,
            "latent_dim": D,
        }
    )
    params.add("in.w", _affine_init(rng, D, W))
    params.add("in.b", np.zeros((1, W)))
    for i in range(config.n_blocks):
        p = f"block{i}"
        params.add(f"{p}.cond_t.w", _affine_init(rng, E, W))
        params.add(f"{p}.cond_c.w", _affine_init(rng, E, W))
        params.add(f"{p}.cond.b", np.zeros((1, W)))
        params.add(f"{p}.mlp1.w", _affine_init(rng, W, W))
        params.add(f"{p}.mlp1.b", np.zeros((1, W)))
        params.add(f"{p}.mlp2.w", _affine_init(rng, W, W))
        params.add(f"{p}.mlp2.b", np.zeros((1, W)))
        params.add(f"{p}.mix", np.eye(F))
    params.add("time.w", _affine_init(rng, 2 * N_FOURIER_PAIRS, E))
    params.add("time.b", np.zeros((1, E)))
    params.add("emb.content", rng.standard_normal((C, E)))
    params.add("emb.style", rng.standard_normal((S, E)))
    params.add("emb.null", rng.standard_normal((1, E)))
    params.add("out.w", _affine_init(rng, W, D))
    params.add("out.b", np.zeros((1, D)))
    return params


def n_backbone_blocks(params: ParamStore) -> int:
    n = params.meta.get("n_blocks")
    if n is not None:
        return int(n)
    n = 0
    while f"block{n}.mix" in params:
        n += 1
    return n


# Constant helper tensors, cached since they carry no gradient state.
_ONES: dict[int, Tensor] = {}
_ONEHOT: dict[tuple[int, int], Tensor] = {}


def _ones_col(n: int) -> Tensor:
    t = _ONES.get(n)
    if t is None:
        t = Tensor(np.ones((n, 1)))
        _ONES[n] = t
    return t


def _onehot(n: int, idx: int) -> Tensor:
    t = _ONEHOT.get((n, idx))
    if t is None:
        row = np.zeros((1, n))
        row[0, idx] = 1.0
        t = Tensor(row)
        _ONEHOT[(n, idx)] = t
    return t


def _tile_rows(row: Tensor, n: int) -> Tensor:
    return ad.matmul(_ones_col(n), row)


def time_features(t: float) -> np.ndarray:
    """Fourier features of t on half-period frequencies, injective on [0, 1]."""
    k = np.arange(1, N_FOURIER_PAIRS + 1)
    ang = np.pi * k * t
    return np.concatenate([np.sin(ang), np.cos(ang)]).reshape(1, -1)


def cond_embedding(params: ParamStore, c: ConditionCode) -> Tensor:
    if c.is_null:
        return params["emb.null"]
    n_contents = params["emb.content"].shape[0]
    e = ad.matmul(_onehot(n_contents, c.content_id), params["emb.content"])
    if c.style_id is not None:
        n_styles = params["emb.style"].shape[0]
        e = ad.add(e, ad.matmul(_onehot(n_styles, c.style_id), params["emb.style"]))
    return e


def time_embedding(params: ParamStore, t: float) -> Tensor:
    feats = Tensor(time_features(t))
    return ad.add(ad.matmul(feats, params["time.w"]), params["time.b"])


def apply_block(
    params: ParamStore, prefix: str, h: Tensor, te: Tensor, ce: Tensor, n_rows: int
) -> Tensor:
    """One residual block: additive embedding, per-frame MLP, temporal mix."""
    e = ad.add(
        ad.add(ad.matmul(te, params[f"{prefix}.cond_t.w"]),
               ad.matmul(ce, params[f"{prefix}.cond_c.w"])),
        params[f"{prefix}.cond.b"],
    )
    u = ad.add(h, _tile_rows(e, n_rows))
    m = ad.gelu(ad.add(ad.matmul(u, params[f"{prefix}.mlp1.w"]),
                       _tile_rows(params[f"{prefix}.mlp1.b"], n_rows)))
    m = ad.add(ad.matmul(m, params[f"{prefix}.mlp2.w"]),
               _tile_rows(params[f"{prefix}.mlp2.b"], n_rows))
    return ad.add(h, ad.matmul(params[f"{prefix}.mix"], m))


def velocity(params: ParamStore, x_t, t: float, c: ConditionCode) -> Tensor:
    """v_theta(x_t, t, c): deterministic (F, D) -> (F, D) forward pass."""
    x = ad.as_tensor(x_t)
    F = x.shape[0]
    te = time_embedding(params, t)
    ce = cond_embedding(params, c)
    h = ad.add(ad.matmul(x, params["in.w"]), _tile_rows(params["in.b"], F))
    for i in range(n_backbone_blocks(params)):
        h = apply_block(params, f"block{i}", h, te, ce, F)
    return ad.add(ad.matmul(h, params["out.w"]), _tile_rows(params["out.b"], F))


def interp_noise(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    """Linear path (1 - t) * x0 + t * x1; exact at the endpoints."""
    if not 0.0 <= t <= 1.0:
        raise RangeError(f"t must be in [0, 1], got {t}")
    if np.shape(x0) != np.shape(x1):
        raise RangeError(f"shapes differ: {np.shape(x0)} vs {np.shape(x1)}")
    if t == 0.0:
        return np.array(x0, dtype=np.float64)
    if t == 1.0:
        return np.array(x1, dtype=np.float64)
    return (1.0 - t) * np.asarray(x0, dtype=np.float64) + t * np.asarray(x1, dtype=np.float64)


def fm_loss(
    params: ParamStore,
    batch: list[tuple[np.ndarray, ConditionCode]],
    rng: np.random.Generator,
    p_drop: float = 0.1,
    t_clamp: float = 0.0,
    velocity_fn=None,
) -> Tensor:
    """Flow-matching objective: mean over the batch of the per-item MSE
    between the predicted velocity and x1 - x0.

    Per item the draws are t ~ U[t_clamp, 1 - t_clamp], x1 ~ N(0, I), and
    a condition-dropout coin with probability p_drop (classifier-free
    training). ``velocity_fn`` overrides the network, for test stubs.
    """
    if not batch:
        raise ContractError("fm_loss needs a nonempty batch")
    vfn = velocity_fn if velocity_fn is not None else (
        lambda x_t, t, c: velocity(params, x_t, t, c)
    )
    total = None
    for x0, code in batch:
        t = float(rng.uniform(t_clamp, 1.0 - t_clamp))
        x1 = rng.standard_normal(x0.shape)
        dropped = rng.random() < p_drop
        c_used = NULL_CODE if dropped else code
        x_t = interp_noise(x0, x1, t)
        pred = vfn(x_t, t, c_used)
        item = ad.mse(pred, Tensor(x1 - x0))
        total = item if total is None else ad.add(total, item)
    return ad.scale(total, 1.0 / len(batch))


@dataclass
class PretrainResult:
    params: ParamStore
    loss_trace: list[float]
    cfg_margin: float


def cfg_informativeness(
    params: ParamStore,
    dataset: SyntheticDataset,
    seed: int,
    n_draws: int = 500,
    t_clamp: float = 0.02,
) -> float:
    """Mean ||v(x_t, t, styled) - v(x_t, t, null)|| over random draws."""
    rng = rng_for(seed, "cfg-margin")
    gaps = []
    with ad.no_grad():
        for _ in range(n_draws):
            [(x0, code)] = dataset.sample_batch(rng, 1, 1.0)
            t = float(rng.uniform(t_clamp, 1.0 - t_clamp))
            x1 = rng.standard_normal(x0.shape)
            x_t = interp_noise(x0, x1, t)
            vc = velocity(params, x_t, t, code).data
            vn = velocity(params, x_t, t, NULL_CODE).data
            gaps.append(float(np.linalg.norm(vc - vn)))
    return float(np.mean(gaps))


def pretrain(
    config: BackboneConfig,
    dataset: SyntheticDataset,
    steps: int,
    pretrain_config: PretrainConfig,
    seed: int,
) -> PretrainResult:
    """Train the velocity network with condition dropout, then freeze it.

    Raises NumericsError (with the step index) on a non-finite loss, and
    ContractError if the post-training CFG margin check is enabled and the
    styled-vs-null velocity gap falls under the configured threshold.
    """
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    params = init_backbone(config, dataset.config, seed)
    opt = AdamW(params, pretrain_config.optimizer)
    trace = []
    for step in range(steps):
        rng = rng_for(seed, "pretrain-step", step)
        batch = dataset.sample_batch(
            rng, pretrain_config.batch_size, pretrain_config.style_fusion_prob
        )
        opt.zero_grad()
        with Tape():
            loss = fm_loss(
                params, batch, rng,
                p_drop=pretrain_config.p_drop,
                t_clamp=pretrain_config.t_clamp,
            )
            value = loss.item()
            if not np.isfinite(value):
                raise NumericsError(f"non-finite pretraining loss at step {step}")
            backward(loss)
        opt.step()
        trace.append(value)

    params.freeze()
    margin = cfg_informativeness(
        params, dataset, child_seed(rng_for(seed, "cfg-margin-seed")),
        n_draws=pretrain_config.cfg_margin_draws,
    )
    if pretrain_config.enforce_cfg_margin and margin < pretrain_config.cfg_margin:
        raise ContractError(
            f"CFG informativeness margin {margin:.4f} below "
            f"{pretrain_config.cfg_margin}; pair generation would be degenerate"
        )
    return PretrainResult(params=params, loss_trace=trace, cfg_margin=margin)

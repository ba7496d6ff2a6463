"""Trainable adapter injected into the frozen backbone at a fixed stride.

The adapter consumes an (F+1, D) condition sequence: row 0 is the edited
first frame, rows 1..F the full source latent. It mirrors the backbone
block structure on this longer sequence (so its temporal mixing can move
edited-frame information into every source row) and owns one adapter
block per `s_in` backbone blocks. After backbone block s_in - 1,
2 s_in - 1, ..., the corresponding adapter block runs and its injection
head's output, minus row 0, is added to the backbone hidden state.

Injection heads start at exactly zero, so a freshly initialized joint
model reproduces the frozen backbone bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .backbone import (
    BackboneConfig,
    _affine_init,
    _tile_rows,
    apply_block,
    cond_embedding,
    n_backbone_blocks,
    time_embedding,
)
from .errors import ConfigError, ContractError, ShapeError
from .rng import rng_for
from .synthvid import ConditionCode


@dataclass(frozen=True)
class ConditionPack:
    """Inputs that steer propagation: full source, edited first frame, caption."""

    source: np.ndarray
    edited_first: np.ndarray
    caption: ConditionCode

    def __post_init__(self):
        if self.caption.is_null:
            raise ContractError("condition pack caption must not be null")
        ef = np.asarray(self.edited_first)
        if ef.ndim == 2 and ef.shape[0] == 1:
            ef = ef[0]
        if ef.ndim != 1 or ef.shape[0] != np.shape(self.source)[1]:
            raise ShapeError(
                f"edited_first dim {ef.shape} incompatible with source "
                f"{np.shape(self.source)}"
            )
        object.__setattr__(self, "edited_first", ef)


def assemble_condition(pack: ConditionPack) -> np.ndarray:
    """(F+1, D) matrix: edited first frame on top of the source frames."""
    return np.vstack([np.asarray(pack.edited_first)[None, :], np.asarray(pack.source)])


def n_adapter_blocks(params: ParamStore) -> int:
    n = params.meta.get("n_adapter_blocks")
    if n is not None:
        return int(n)
    n = 0
    while f"ablock{n}.mix" in params:
        n += 1
    return n


def init_adapter(config: BackboneConfig, data_config, seed: int) -> ParamStore:
    """Adapter parameters: N_B / S_in blocks plus the condition input map."""
    if config.n_blocks % config.s_in != 0:
        raise ConfigError(
            f"n_blocks={config.n_blocks} not divisible by s_in={config.s_in}"
        )
    n_ablocks = config.n_blocks // config.s_in
    F, D = data_config.n_frames, data_config.latent_dim
    W, E = config.width, config.time_embed_dim
    rng = rng_for(seed, "adapter-init")

    params = ParamStore(
        meta={
            "n_adapter_blocks": n_ablocks,
            "s_in": config.s_in,
            "width": W,
            "n_frames": F,
            "latent_dim": D,
        }
    )
    params.add("cond_in.w", _affine_init(rng, D, W))
    params.add("cond_in.b", np.zeros((1, W)))
    for k in range(n_ablocks):
        p = f"ablock{k}"
        params.add(f"{p}.cond_t.w", _affine_init(rng, E, W))
        params.add(f"{p}.cond_c.w", _affine_init(rng, E, W))
        params.add(f"{p}.cond.b", np.zeros((1, W)))
        params.add(f"{p}.mlp1.w", _affine_init(rng, W, W))
        params.add(f"{p}.mlp1.b", np.zeros((1, W)))
        params.add(f"{p}.mlp2.w", _affine_init(rng, W, W))
        params.add(f"{p}.mlp2.b", np.zeros((1, W)))
        params.add(f"{p}.mix", np.eye(F + 1))
        # Zero-init so the joint model starts exactly at the backbone.
        params.add(f"{p}.inj.w", np.zeros((W, W)))
        params.add(f"{p}.inj.b", np.zeros((1, W)))
    return params


# Row-dropping selector [0 | I]: (F, F+1), cached per F.
_DROP: dict[int, Tensor] = {}


def _drop_first_row(n_frames: int) -> Tensor:
    t = _DROP.get(n_frames)
    if t is None:
        sel = np.zeros((n_frames, n_frames + 1))
        sel[:, 1:] = np.eye(n_frames)
        t = Tensor(sel)
        _DROP[n_frames] = t
    return t


def joint_velocity(
    theta: ParamStore,
    phi: ParamStore,
    x_t,
    t: float,
    caption: ConditionCode,
    pack: ConditionPack,
    collect_hidden: list | None = None,
) -> Tensor:
    """Velocity of backbone + adapter, v_{theta,phi}(x_t, t, c, source, edit).

    ``collect_hidden`` (testing hook) receives the backbone hidden state
    after every block, post-injection.
    """
    if not theta.frozen:
        raise ContractError("joint_velocity requires a frozen backbone")
    if pack.caption != caption:
        raise ContractError("caption and pack.caption must be the same code")
    n_b = n_backbone_blocks(theta)
    n_a = n_adapter_blocks(phi)
    if n_a == 0 or n_b % n_a != 0:
        raise ConfigError(
            f"{n_b} backbone blocks not an integer multiple of {n_a} adapter blocks"
        )
    s_in = n_b // n_a
    if "s_in" in phi.meta and int(phi.meta["s_in"]) != s_in:
        raise ConfigError(
            f"adapter built for stride {phi.meta['s_in']}, backbone implies {s_in}"
        )

    x = ad.as_tensor(x_t)
    F = x.shape[0]
    te = time_embedding(theta, t)
    ce = cond_embedding(theta, caption)

    cond = Tensor(assemble_condition(pack))
    a = ad.add(ad.matmul(cond, phi["cond_in.w"]), _tile_rows(phi["cond_in.b"], F + 1))
    h = ad.add(ad.matmul(x, theta["in.w"]), _tile_rows(theta["in.b"], F))

    for i in range(n_b):
        h = apply_block(theta, f"block{i}", h, te, ce, F)
        if (i + 1) % s_in == 0:
            k = (i + 1) // s_in - 1
            a = apply_block(phi, f"ablock{k}", a, te, ce, F + 1)
            inj = ad.add(ad.matmul(a, phi[f"ablock{k}.inj.w"]),
                         _tile_rows(phi[f"ablock{k}.inj.b"], F + 1))
            h = ad.add(h, ad.matmul(_drop_first_row(F), inj))
        if collect_hidden is not None:
            collect_hidden.append(h.data.copy())
    return ad.add(ad.matmul(h, theta["out.w"]), _tile_rows(theta["out.b"], F))

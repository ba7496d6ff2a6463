"""Guided velocities, one-step clean-latent estimates, and training pairs.

The supervision unit is a PairSample: from one noised latent x_t and a
single pair of raw velocity evaluations (conditional and unconditional),
two guidance scales produce a low-guidance "source" estimate and a
high-guidance "target" estimate. Their difference is, by construction,
-t * (omega_high - omega_low) * (v_cond - v_uncond), which is what makes
the pair structurally aligned.

A closed-form conditional-velocity oracle for Gaussian data validates the
whole chain: for x0 ~ N(mu0, sigma0^2 I) and x1 ~ N(0, I) on the linear
path, E[x1 - x0 | x_t] is available exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .backbone import velocity
from .errors import ContractError, RangeError, ShapeError
from .synthvid import ConditionCode, NULL_CODE


@dataclass(frozen=True)
class GuidanceConfig:
    omega_low: float = 1.0
    omega_high: float = 7.0

    def __post_init__(self):
        if not (self.omega_high > self.omega_low >= 0.0):
            raise RangeError(
                f"need omega_high > omega_low >= 0, got "
                f"({self.omega_low}, {self.omega_high})"
            )


@dataclass
class PairSample:
    """On-the-fly supervision unit; all arrays are plain float64 (no grad)."""

    x_t: np.ndarray
    t: float
    c_aug: ConditionCode
    x_low: np.ndarray
    x_high: np.ndarray
    v_high: np.ndarray


def cfg_combine(v_uncond: np.ndarray, v_cond: np.ndarray, omega: float) -> np.ndarray:
    """v_uncond + omega * (v_cond - v_uncond).

    omega = 0 and omega = 1 return exact copies of the respective input so
    the endpoint identities hold bitwise, not just to rounding.
    """
    if np.shape(v_uncond) != np.shape(v_cond):
        raise ShapeError(
            f"cfg_combine: shapes {np.shape(v_uncond)} and {np.shape(v_cond)} differ"
        )
    if omega == 0.0:
        return np.array(v_uncond, dtype=np.float64)
    if omega == 1.0:
        return np.array(v_cond, dtype=np.float64)
    v_uncond = np.asarray(v_uncond, dtype=np.float64)
    v_cond = np.asarray(v_cond, dtype=np.float64)
    return v_uncond + omega * (v_cond - v_uncond)


def estimate_clean(x_t: np.ndarray, t: float, v: np.ndarray) -> np.ndarray:
    """One-step clean estimate x_t - t * v."""
    if not 0.0 <= t <= 1.0:
        raise RangeError(f"t must be in [0, 1], got {t}")
    if t == 0.0:
        return np.array(x_t, dtype=np.float64)
    return np.asarray(x_t, dtype=np.float64) - t * np.asarray(v, dtype=np.float64)


def gen_pair(
    theta: ParamStore,
    x_t: np.ndarray,
    t: float,
    c_aug: ConditionCode,
    cfg: GuidanceConfig,
) -> PairSample:
    """Build a source/target pair from one noised latent.

    Evaluates the frozen backbone exactly twice (conditional and
    unconditional); nothing in here touches a tape, so no gradients are
    recorded regardless of the surrounding context. The returned sample
    aliases the caller's x_t so downstream losses can assert they condition
    on the very same latent.
    """
    if c_aug.is_null:
        raise ContractError("gen_pair needs a non-null condition")
    if not theta.frozen:
        raise ContractError("gen_pair requires a frozen backbone")
    with ad.no_grad():
        v_cond = velocity(theta, x_t, t, c_aug).data
        v_uncond = velocity(theta, x_t, t, NULL_CODE).data
    v_low = cfg_combine(v_uncond, v_cond, cfg.omega_low)
    v_high = cfg_combine(v_uncond, v_cond, cfg.omega_high)
    return PairSample(
        x_t=x_t,
        t=float(t),
        c_aug=c_aug,
        x_low=estimate_clean(x_t, t, v_low),
        x_high=estimate_clean(x_t, t, v_high),
        v_high=v_high,
    )


def gaussian_velocity_oracle(
    mu0: np.ndarray, sigma0: float, x_t: np.ndarray, t: float
) -> np.ndarray:
    """Closed-form E[x1 - x0 | x_t] for Gaussian data on the linear path.

    With s^2 = (1 - t)^2 sigma0^2 + t^2:
        E[x0 | x_t] = mu0 + (1 - t) sigma0^2 (x_t - (1 - t) mu0) / s^2
        E[x1 | x_t] = t (x_t - (1 - t) mu0) / s^2
    """
    if not 0.0 < t < 1.0:
        raise RangeError(f"oracle needs t in (0, 1), got {t}")
    mu0 = np.asarray(mu0, dtype=np.float64)
    x_t = np.asarray(x_t, dtype=np.float64)
    s2 = (1.0 - t) ** 2 * sigma0**2 + t**2
    centered = x_t - (1.0 - t) * mu0
    e_x0 = mu0 + (1.0 - t) * sigma0**2 * centered / s2
    e_x1 = t * centered / s2
    return e_x1 - e_x0

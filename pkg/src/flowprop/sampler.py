"""ODE integration from noise to data, full and partial.

`ode_sample` integrates dx/dt = v(x, t) from t = 1 down to 0 on a uniform
grid with Euler or Heun steps. `partial_sample` starts from an
intermediate latent at time t and integrates to 0 in ceil(N * t) steps;
with a single step it reduces exactly to the one-step clean estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericsError, RangeError
from .guidance import cfg_combine
from .synthvid import ConditionCode, NULL_CODE


@dataclass(frozen=True)
class SamplerConfig:
    n_steps: int = 25
    method: str = "euler"
    omega: float = 1.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise RangeError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.method not in ("euler", "heun"):
            raise RangeError(f"method must be euler or heun, got {self.method!r}")


def _guided(velocity_fn, x, t, c, omega):
    if omega == 1.0:
        return np.asarray(velocity_fn(x, t, c), dtype=np.float64)
    v_uncond = np.asarray(velocity_fn(x, t, NULL_CODE), dtype=np.float64)
    v_cond = np.asarray(velocity_fn(x, t, c), dtype=np.float64)
    return cfg_combine(v_uncond, v_cond, omega)


def _integrate(velocity_fn, x_start, t_start, n_steps, c, config, collect):
    x = np.array(x_start, dtype=np.float64)
    h = t_start / n_steps
    trajectory = [x.copy()] if collect else None
    for k in range(n_steps):
        t_cur = t_start - k * h
        t_next = t_start - (k + 1) * h
        v = _guided(velocity_fn, x, t_cur, c, config.omega)
        if config.method == "euler":
            x = x - h * v
        else:
            x_pred = x - h * v
            v_next = _guided(velocity_fn, x_pred, t_next, c, config.omega)
            x = x - (h / 2.0) * (v + v_next)
        if not np.all(np.isfinite(x)):
            raise NumericsError(f"non-finite state at integration step {k}")
        if collect:
            trajectory.append(x.copy())
    return (x, trajectory) if collect else x


def ode_sample(
    velocity_fn,
    x1: np.ndarray,
    c: ConditionCode,
    config: SamplerConfig,
    return_trajectory: bool = False,
):
    """Generate by integrating from pure noise at t = 1 down to t = 0."""
    if not np.all(np.isfinite(x1)):
        raise NumericsError("initial state is not finite")
    return _integrate(velocity_fn, x1, 1.0, config.n_steps, c, config, return_trajectory)


def partial_sample(
    velocity_fn,
    x_t: np.ndarray,
    t: float,
    c: ConditionCode,
    config: SamplerConfig,
    return_trajectory: bool = False,
):
    """Denoise an intermediate latent from time t to 0 in ceil(N * t) steps."""
    if not 0.0 <= t <= 1.0:
        raise RangeError(f"t must be in [0, 1], got {t}")
    if t == 0.0:
        x = np.array(x_t, dtype=np.float64)
        return (x, [x.copy()]) if return_trajectory else x
    n = math.ceil(config.n_steps * t)
    return _integrate(velocity_fn, x_t, t, n, c, config, return_trajectory)

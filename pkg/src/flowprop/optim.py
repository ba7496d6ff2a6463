"""AdamW with decoupled weight decay, on ParamStore tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ParamStore


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


class AdamW:
    def __init__(self, params: ParamStore, config: AdamWConfig = AdamWConfig()):
        self.params = params
        self.config = config
        self.step_count = 0
        self._m = {k: np.zeros_like(t.data) for k, t in params.items() if t.requires_grad}
        self._v = {k: np.zeros_like(t.data) for k, t in params.items() if t.requires_grad}

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def step(self) -> None:
        c = self.config
        self.step_count += 1
        t = self.step_count
        bias1 = 1.0 - c.beta1**t
        bias2 = 1.0 - c.beta2**t
        for name, p in self.params.items():
            if not p.requires_grad:
                continue
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self._m[name]
            v = self._v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            p.data = p.data - c.lr * (m_hat / (np.sqrt(v_hat) + c.eps) + c.weight_decay * p.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"step": np.asarray([float(self.step_count)])}
        for k in self._m:
            out[f"{k}.m"] = self._m[k].copy()
            out[f"{k}.v"] = self._v[k].copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(np.asarray(state["step"]).reshape(-1)[0])
        for k in self._m:
            self._m[k] = np.asarray(state[f"{k}.m"], dtype=np.float64).copy()
            self._v[k] = np.asarray(state[f"{k}.v"], dtype=np.float64).copy()

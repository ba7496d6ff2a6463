"""Quantitative metrics and the report container.

style_alignment looks only at the appearance channel, motion_alignment
only at the motion channel, so each is exactly invariant to perturbations
of the other channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .guidance import PairSample
from .synthvid import appearance_channel, motion_channel


def style_alignment(edited: np.ndarray, target: np.ndarray) -> float:
    """exp(-mean squared appearance error); 1.0 means an exact match."""
    if np.shape(edited) != np.shape(target):
        raise ShapeError(f"shapes differ: {np.shape(edited)} vs {np.shape(target)}")
    diff = appearance_channel(np.asarray(edited)) - appearance_channel(np.asarray(target))
    return float(np.exp(-np.mean(diff * diff)))


def _displacements(latent: np.ndarray) -> np.ndarray:
    return np.diff(motion_channel(np.asarray(latent)), axis=0).reshape(-1)


def motion_alignment(a: np.ndarray, b: np.ndarray, with_flag: bool = False):
    """Pearson correlation of the flattened frame-to-frame displacement
    sequences of the two videos' motion channels.

    Identical sequences score 1.0 outright. If either sequence has zero
    variance the correlation is undefined; the value is 0.0 and, with
    ``with_flag``, the degenerate marker is returned alongside.
    """
    if np.shape(a)[0] < 3 or np.shape(b)[0] < 3:
        raise ContractError("motion_alignment needs at least 3 frames")
    da, db = _displacements(a), _displacements(b)
    if np.array_equal(da, db):
        return (1.0, False) if with_flag else 1.0
    va = da - da.mean()
    vb = db - db.mean()
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return (0.0, True) if with_flag else 0.0
    corr = float(np.dot(va, vb) / (na * nb))
    return (corr, False) if with_flag else corr


def semantic_gap(pair: PairSample) -> float:
    """Frobenius norm of (target - source), normalized by sqrt(F * D)."""
    diff = np.asarray(pair.x_high) - np.asarray(pair.x_low)
    return float(np.linalg.norm(diff) / np.sqrt(diff.size))


@dataclass
class MetricReport:
    """Per-sample metric values plus their means, for one experiment run."""

    experiment: str
    seed: int
    config_hash: str
    per_sample: dict[str, list[float]] = field(default_factory=dict)

    def record(self, metric: str, value: float) -> None:
        self.per_sample.setdefault(metric, []).append(float(value))

    def aggregate(self, metric: str) -> float:
        return float(np.mean(self.per_sample[metric]))

    def aggregates(self) -> dict[str, float]:
        return {m: self.aggregate(m) for m in self.per_sample}

    def rows(self):
        """CSV rows: one per sample per metric, then one aggregate per metric."""
        for metric, values in self.per_sample.items():
            for i, v in enumerate(values):
                yield (self.experiment, self.seed, str(i), metric, v)
        for metric in self.per_sample:
            yield (self.experiment, self.seed, "aggregate", metric, self.aggregate(metric))

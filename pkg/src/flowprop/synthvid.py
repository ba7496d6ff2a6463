"""Deterministic synthetic video latents with separable motion and style.

A latent is an (F, D) float64 matrix. Columns 0..1 are the motion channel
(a 2-d position per frame, kept inside [-2, 2]); columns 2..D-1 are the
appearance channel. Appearance decomposes additively into a per-content
base vector, an optional style embedding, and small per-sample noise.
All appearance components are snapped to a dyadic grid (2^-26) so that
style shifts add and cancel without floating-point residue; the analytic
edit oracle is an exact involution because of this.

A Gaussian toy mode replaces the trajectory construction with per-frame
iid draws x0 ~ N(mu0(code), sigma0^2 I), which is the regime where the
guidance module's closed-form velocity oracle applies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IdError
from .rng import child_seed, rng_for

_GRID = 2.0**26


def snap(x: np.ndarray) -> np.ndarray:
    """Round to the dyadic grid that keeps appearance arithmetic exact."""
    return np.round(np.asarray(x, dtype=np.float64) * _GRID) / _GRID


@dataclass(frozen=True)
class ConditionCode:
    """Discrete condition: content id plus optional style id.

    ``is_null`` marks the unconditional token; a null code ignores both ids.
    """

    content_id: int
    style_id: int | None = None
    is_null: bool = False

    @staticmethod
    def null() -> "ConditionCode":
        return ConditionCode(0, None, True)


NULL_CODE = ConditionCode.null()


@dataclass(frozen=True)
class SynthConfig:
    n_frames: int = 8
    latent_dim: int = 16
    n_contents: int = 8
    n_styles: int = 16
    noise_sigma: float = 0.1
    library_seed: int = 1234
    gaussian_toy: bool = False
    toy_sigma0: float = 0.5

    def __post_init__(self):
        if self.latent_dim < 3:
            raise ValueError("latent_dim must leave room for 2 motion dims")
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")


class StyleLibrary:
    """Fixed bank of unit-norm style embeddings, regenerated bit-identically
    from (seed, n_styles, dim)."""

    MIN_PAIRWISE_DIST = 0.1

    def __init__(self, n_styles: int, dim: int, seed: int):
        g = rng_for(seed, "style-library")
        raw = g.standard_normal((n_styles, dim))
        raw = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        self.embeddings = snap(raw)
        self.n_styles = n_styles
        dists = [
            np.linalg.norm(self.embeddings[i] - self.embeddings[j])
            for i in range(n_styles)
            for j in range(i + 1, n_styles)
        ]
        if dists and min(dists) <= self.MIN_PAIRWISE_DIST:
            raise ValueError(
                f"style seed {seed} produced embeddings closer than "
                f"{self.MIN_PAIRWISE_DIST}; pick another seed"
            )

    def embedding(self, style_id: int) -> np.ndarray:
        if not 0 <= style_id < self.n_styles:
            raise IdError(f"style_id {style_id} outside [0, {self.n_styles})")
        return self.embeddings[style_id]


class SyntheticDataset:
    """Sample source, analytic edit oracle, and batch sampler."""

    def __init__(self, config: SynthConfig = SynthConfig()):
        self.config = config
        c = config
        app_dim = c.latent_dim - 2
        self.styles = StyleLibrary(c.n_styles, app_dim, c.library_seed)
        g = rng_for(c.library_seed, "content-base")
        self.content_bases = snap(g.uniform(-1.5, 1.5, size=(c.n_contents, app_dim)))
        # Toy-mode condition means, compositional in (content, style). The
        # content scale keeps conditions well separated relative to sigma0,
        # which is what makes guidance on the toy informative.
        gt = rng_for(c.library_seed, "toy-means")
        self._toy_content_mu = 2.0 * gt.standard_normal((c.n_contents, c.latent_dim))
        self._toy_style_mu = 0.75 * gt.standard_normal((c.n_styles, c.latent_dim))

    # -- id checking ---------------------------------------------------

    def _check_ids(self, content_id: int, style_id: int | None) -> None:
        if not 0 <= content_id < self.config.n_contents:
            raise IdError(f"content_id {content_id} outside [0, {self.config.n_contents})")
        if style_id is not None and not 0 <= style_id < self.config.n_styles:
            raise IdError(f"style_id {style_id} outside [0, {self.config.n_styles})")

    # -- generation ----------------------------------------------------

    def gen_sample(
        self, seed: int, content_id: int, style_id: int | None = None
    ) -> tuple[np.ndarray, ConditionCode]:
        """One (latent, code) pair, a pure function of its arguments.

        The appearance noise stream is keyed by (seed, content) only, so two
        samples that differ only in style share motion and noise exactly.
        """
        self._check_ids(content_id, style_id)
        code = ConditionCode(content_id, style_id)
        if self.config.gaussian_toy:
            return self._gen_toy(seed, code), code
        c = self.config
        F, D = c.n_frames, c.latent_dim
        latent = np.empty((F, D))

        # Each content owns a pair of anti-phase trajectory basins; the
        # per-sample mode flip picks one, the way a real clip commits to one
        # concrete motion. Averaged over the flip the two basins cancel, so
        # the condition shifts no motion *mean* (pairs built from one shared
        # velocity evaluation stay motion-aligned); the basin structure only
        # matters when a sampler has to resolve a trajectory, where content
        # inferred from the appearance channel selects the phase family.
        # Offset and trend are free draws: they carry no condition signal.
        gm = rng_for(seed, "motion", content_id)
        f = np.arange(F) / F
        frac = content_id / max(1, c.n_contents - 1)
        mode_flip = np.pi if gm.random() < 0.5 else 0.0
        for k in range(2):
            psi_center = 2.0 * np.pi * frac + k * (np.pi / 2.0) + mode_flip
            a = gm.uniform(-1.0, 1.0)
            b = gm.uniform(-0.5, 0.5)
            psi = psi_center + gm.uniform(-np.pi / 6.0, np.pi / 6.0)
            latent[:, k] = a + b * f + 0.5 * np.sin(2.0 * np.pi * f + psi)

        gn = rng_for(seed, "appearance-noise", content_id)
        noise = snap(c.noise_sigma * gn.standard_normal((F, D - 2)))
        app = self.content_bases[content_id] + noise
        if style_id is not None:
            app = app + self.styles.embedding(style_id)
        latent[:, 2:] = app
        return latent, code

    def _gen_toy(self, seed: int, code: ConditionCode) -> np.ndarray:
        c = self.config
        g = rng_for(seed, "toy-frames", code.content_id)
        eps = g.standard_normal((c.n_frames, c.latent_dim))
        return self.mu0_for(code) + c.toy_sigma0 * eps

    def mu0_for(self, code: ConditionCode) -> np.ndarray:
        """Per-condition mean of the Gaussian toy distribution."""
        if code.is_null:
            raise IdError("null code has no single toy-mode mean")
        self._check_ids(code.content_id, code.style_id)
        mu = self._toy_content_mu[code.content_id]
        if code.style_id is not None:
            mu = mu + self._toy_style_mu[code.style_id]
        return mu

    # -- analytic edit oracle -------------------------------------------

    def oracle_edit(self, video: np.ndarray, from_style: int, to_style: int) -> np.ndarray:
        """Ground-truth style edit: shift appearance by the embedding delta.

        Exact involution: editing a->b then b->a returns the input bitwise,
        because embeddings and appearance live on a shared dyadic grid.
        """
        delta = self.styles.embedding(to_style) - self.styles.embedding(from_style)
        out = video.copy()
        out[:, 2:] = video[:, 2:] + delta
        return out

    # -- batching --------------------------------------------------------

    def sample_batch(
        self,
        rng: np.random.Generator,
        batch_size: int,
        style_fusion_prob: float,
        style_ids: tuple[int, ...] | None = None,
    ) -> list[tuple[np.ndarray, ConditionCode]]:
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        if not 0.0 <= style_fusion_prob <= 1.0:
            raise ValueError(f"style_fusion_prob must be in [0, 1], got {style_fusion_prob}")
        pool = tuple(style_ids) if style_ids is not None else tuple(range(self.config.n_styles))
        out = []
        for _ in range(batch_size):
            content = int(rng.integers(self.config.n_contents))
            style = None
            if rng.random() < style_fusion_prob:
                style = pool[int(rng.integers(len(pool)))]
            out.append(self.gen_sample(child_seed(rng), content, style))
        return out


def motion_channel(latent: np.ndarray) -> np.ndarray:
    return latent[:, :2]


def appearance_channel(latent: np.ndarray) -> np.ndarray:
    return latent[:, 2:]

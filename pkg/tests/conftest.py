"""Session-scoped heavy fixtures shared by the acceptance gate and the
module tests that exercise trained-model behavior.

Pretraining settings here are the tuned, exposed-config values (see
scripts/calibrate_*.py); the step counts that acceptance criteria pin are
asserted where they matter.
"""

import dataclasses
import time

import pytest

from flowprop.ablations import EvalConfig, train_style_pool
from flowprop.backbone import BackboneConfig, PretrainConfig, pretrain
from flowprop.gmfm import TrainConfig, train_adapter
from flowprop.optim import AdamWConfig
from flowprop.synthvid import SynthConfig, SyntheticDataset

TOY_PRETRAIN = PretrainConfig(
    steps=2000, batch_size=32,
    optimizer=AdamWConfig(lr=5e-3, weight_decay=0.0),
)
MAIN_PRETRAIN = dataclasses.replace(TOY_PRETRAIN, steps=6000)
GMFM_SEEDS = (0, 1, 2)
CONTRAST_STEPS = 1200
EVAL = EvalConfig()


@pytest.fixture(scope="session")
def dataset():
    return SyntheticDataset()


@pytest.fixture(scope="session")
def toy_dataset():
    return SyntheticDataset(SynthConfig(gaussian_toy=True))


@pytest.fixture(scope="session")
def toy_backbone(toy_dataset):
    started = time.perf_counter()
    result = pretrain(BackboneConfig(), toy_dataset, TOY_PRETRAIN.steps,
                      TOY_PRETRAIN, seed=0)
    result.wall_s = time.perf_counter() - started
    return result


@pytest.fixture(scope="session")
def main_backbone(dataset):
    result = pretrain(BackboneConfig(), dataset, MAIN_PRETRAIN.steps,
                      MAIN_PRETRAIN, seed=100)
    return result.params


@pytest.fixture(scope="session")
def style_pool(dataset):
    return train_style_pool(dataset, EVAL)


@pytest.fixture(scope="session")
def gmfm_adapter(main_backbone, dataset, style_pool):
    """The default-config 2000-step adapter used by the end-to-end criterion."""
    config = dataclasses.replace(TrainConfig(), train_styles=style_pool)
    assert config.steps == 2000 and config.mode == "gmfm"
    started = time.perf_counter()
    result = train_adapter(main_backbone, BackboneConfig(), dataset, config)
    result.wall_s = time.perf_counter() - started
    return result


@pytest.fixture(scope="session")
def contrast_adapters(main_backbone, dataset, style_pool):
    """One adapter per (seed, mode) at the shared contrast budget; the gmfm
    arm serves both directional criteria."""
    out = {}
    for seed in GMFM_SEEDS:
        for mode in ("gmfm", "standard_fm", "gmfm_no_rspf"):
            config = dataclasses.replace(
                TrainConfig(), steps=CONTRAST_STEPS, mode=mode, seed=seed,
                train_styles=style_pool,
            )
            out[(seed, mode)] = train_adapter(main_backbone, BackboneConfig(),
                                              dataset, config)
    return out

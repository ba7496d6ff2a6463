import dataclasses

import numpy as np
import pytest

from flowprop.ablations import (
    EvalConfig,
    cfg_gap_sweep,
    evaluate_propagation,
    pair_motion_comparison,
    propagate,
    run_ablation,
    train_style_pool,
)
from flowprop.adapter import ConditionPack, init_adapter
from flowprop.backbone import BackboneConfig, init_backbone
from flowprop.errors import ConfigError, ContractError
from flowprop.gmfm import TrainConfig
from flowprop.rng import rng_for
from flowprop.sampler import SamplerConfig
from flowprop.synthvid import ConditionCode, SyntheticDataset

SMALL = BackboneConfig(n_blocks=2, width=24, time_embed_dim=8, s_in=2)
FAST_TRAIN = TrainConfig(steps=0, batch_size=1)
FAST_EVAL = EvalConfig(eval_samples=3, pair_trials=4)
FAST_SAMPLER = SamplerConfig(n_steps=5)


@pytest.fixture(scope="module")
def dataset():
    return SyntheticDataset()


@pytest.fixture(scope="module")
def theta(dataset):
    params = init_backbone(SMALL, dataset.config, seed=21)
    params.freeze()
    return params


def test_train_style_pool_excludes_holdout(dataset):
    pool = train_style_pool(dataset, EvalConfig(holdout_styles=(0, 3)))
    assert 0 not in pool and 3 not in pool
    assert len(pool) == dataset.config.n_styles - 2


def test_unknown_suite_rejected(theta, dataset):
    with pytest.raises(ConfigError):
        run_ablation("nope", theta, SMALL, dataset, FAST_TRAIN, FAST_EVAL,
                     FAST_SAMPLER, seed=0)


def test_missing_backbone_is_io_error(dataset):
    with pytest.raises(FileNotFoundError):
        run_ablation("cfg_sweep", None, SMALL, dataset, FAST_TRAIN, FAST_EVAL,
                     FAST_SAMPLER, seed=0)


def test_cfg_gap_sweep_linearity(theta, dataset):
    sweep = cfg_gap_sweep(theta, dataset, 1.0, (2.0, 5.0, 7.0, 10.0, 20.0),
                          n_draws=5, seed=3)
    assert sweep["max_residual"] < 1e-9
    assert all(len(v) == 5 for v in sweep["gaps"].values())


def test_pair_motion_comparison_shapes(theta, dataset):
    out = pair_motion_comparison(theta, dataset, TrainConfig().guidance,
                                 FAST_SAMPLER, 4, seed=5)
    assert len(out["motion_alignment_onestep"]) == 4
    assert len(out["motion_alignment_fullsampling"]) == 4


def test_propagate_requires_unit_omega(theta, dataset):
    phi = init_adapter(SMALL, dataset.config, seed=1)
    source, _ = dataset.gen_sample(0, 0, 1)
    pack = ConditionPack(source=source, edited_first=source[0],
                         caption=ConditionCode(0, 2))
    with pytest.raises(ConfigError):
        propagate(theta, phi, pack, np.zeros_like(source),
                  SamplerConfig(n_steps=3, omega=7.0))


def test_propagate_rejects_null_branch(theta, dataset):
    # The inference closure refuses the unconditional branch outright.
    from flowprop.ablations import propagation_velocity_fn

    phi = init_adapter(SMALL, dataset.config, seed=2)
    source, _ = dataset.gen_sample(1, 1, 0)
    pack = ConditionPack(source=source, edited_first=source[0],
                         caption=ConditionCode(1, 2))
    fn = propagation_velocity_fn(theta, phi, pack)
    with pytest.raises(ContractError):
        fn(source, 0.5, ConditionCode.null())


def test_evaluate_propagation_metrics(theta, dataset):
    phi = init_adapter(SMALL, dataset.config, seed=3)
    pool = train_style_pool(dataset, FAST_EVAL)
    vals = evaluate_propagation(theta, phi, dataset, FAST_SAMPLER, 9,
                                pool, FAST_EVAL.holdout_styles, 3)
    assert set(vals) == {"style_alignment", "style_alignment_source",
                         "motion_alignment"}
    assert all(len(v) == 3 for v in vals.values())
    assert all(0.0 <= x <= 1.0 for x in vals["style_alignment"])


def test_run_ablation_report_deterministic(theta, dataset):
    def run():
        return run_ablation("fullsampling_vs_onestep", theta, SMALL, dataset,
                            FAST_TRAIN, FAST_EVAL, FAST_SAMPLER, seed=11)

    a, b = run(), run()
    assert a.per_sample == b.per_sample
    assert a.config_hash == b.config_hash


def test_run_ablation_hash_tracks_config(theta, dataset):
    a = run_ablation("cfg_sweep", theta, SMALL, dataset, FAST_TRAIN,
                     FAST_EVAL, FAST_SAMPLER, seed=0)
    changed = dataclasses.replace(FAST_EVAL, pair_trials=5)
    b = run_ablation("cfg_sweep", theta, SMALL, dataset, FAST_TRAIN,
                     changed, FAST_SAMPLER, seed=0)
    assert a.config_hash != b.config_hash


def test_rspf_suite_smoke(theta, dataset):
    # steps=1 exercises both trained arms end to end.
    train = dataclasses.replace(FAST_TRAIN, steps=1)
    report = run_ablation("rspf", theta, SMALL, dataset, train, FAST_EVAL,
                          FAST_SAMPLER, seed=1)
    assert "style_alignment_rspf" in report.per_sample
    assert "style_alignment_no_rspf" in report.per_sample


def test_fm_vs_gmfm_suite_smoke(theta, dataset):
    train = dataclasses.replace(FAST_TRAIN, steps=1)
    report = run_ablation("fm_vs_gmfm", theta, SMALL, dataset, train,
                          FAST_EVAL, FAST_SAMPLER, seed=1)
    assert "style_alignment_gmfm" in report.per_sample
    assert "style_alignment_standard_fm" in report.per_sample

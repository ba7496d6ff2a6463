"""Command-line entry point.

Subcommands: defaults, pretrain, pairgen, train-adapter, propagate, eval,
ablate. Every run writes a manifest (config, seed, output hashes, wall
time) into its output directory. Exit codes: 0 success, 1 runtime
failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from .ablations import (
    SUITES,
    evaluate_propagation,
    propagate,
    run_ablation,
    stable_hash,
    train_style_pool,
)
from .adapter import ConditionPack, init_adapter
from .backbone import init_backbone, pretrain
from .checkpoint import (
    Entry,
    ROLE_DATA,
    ROLE_OPTIMIZER,
    ROLE_PHI,
    ROLE_THETA_FROZEN,
    file_hash,
    load_role,
    save_checkpoint,
)
from .config import ExperimentConfig, apply_env, apply_overrides, parse_config, render_config
from .gmfm import train_adapter
from .guidance import gen_pair
from .backbone import interp_noise
from .metrics import MetricReport, motion_alignment, semantic_gap, style_alignment
from .optim import AdamW
from .rng import child_seed, rng_for
from .synthvid import ConditionCode, SyntheticDataset


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_split(dataset: SyntheticDataset, path, split: str, n_samples: int,
               seed: int, style_fusion_prob: float, overwrite: bool = False) -> None:
    """Dataset dump, one file per split, in the named-tensor layout.

    Each sample stores its latent plus a 2-vector (content_id, style_id)
    with -1 marking an unfused style.
    """
    rng = rng_for(seed, f"dataset-dump-{split}")
    entries = []
    for i, (latent, code) in enumerate(
        dataset.sample_batch(rng, n_samples, style_fusion_prob)
    ):
        style = -1 if code.style_id is None else code.style_id
        entries.append(Entry(f"{split}.sample{i:05d}.latent", ROLE_DATA, latent))
        entries.append(Entry(
            f"{split}.sample{i:05d}.condition", ROLE_DATA,
            np.array([float(code.content_id), float(style)]),
        ))
    save_checkpoint(path, entries, overwrite=overwrite)


def metrics_emit(report: MetricReport, out_dir) -> list[Path]:
    """Write the metric CSV plus a gnuplot script for the standard charts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{report.experiment}_metrics.csv"
    _write_csv(csv_path, "experiment,seed,sample_id,metric,value", report.rows())
    plot_path = out / "plots.gnuplot"
    plot_path.write_text(_plot_script(report, out))
    return [csv_path, plot_path]


def _plot_script(report: MetricReport, out_dir: Path) -> str:
    lines = [
        "# gnuplot script; run from this directory: gnuplot plots.gnuplot",
        "set datafile separator ','",
        "set key outside",
        "set term pngcairo size 900,600",
    ]
    for loss_csv in ("pretrain_loss.csv", "adapter_loss.csv"):
        if (out_dir / loss_csv).exists():
            stem = loss_csv.rsplit(".", 1)[0]
            lines += [
                f"set output '{stem}.png'",
                "set logscale y",
                f"plot '{loss_csv}' using 1:2 every ::1 with lines title '{stem}'",
                "unset logscale y",
            ]
    gap_metrics = sorted(m for m in report.per_sample if m.startswith("semantic_gap_w"))
    if gap_metrics:
        pts = []
        for m in gap_metrics:
            omega = float(m.split("semantic_gap_w")[1])
            pts.append((omega, report.aggregate(m)))
        pts.sort()
        inline = "\\n".join(f"{w} {g}" for w, g in pts)
        lines += [
            "set output 'cfg_gap.png'",
            "$gaps << EOD",
            *[f"{w} {g}" for w, g in pts],
            "EOD",
            "set datafile separator whitespace",
            "plot $gaps using 1:2 with linespoints title 'semantic gap vs omega_high'",
        ]
        _ = inline
    return "\n".join(lines) + "\n"


def _write_manifest(out: Path, command: str, config: ExperimentConfig,
                    outputs: list[Path], wall_s: float) -> Path:
    lines = [
        f"command = {command}",
        f"seed = {config.seed}",
        f"config_hash = {stable_hash(config)}",
        f"wall_time_s = {wall_s:.3f}",
        "[config]",
    ]
    lines += render_config(config).rstrip("\n").splitlines()
    lines.append("[outputs]")
    for p in sorted(outputs):
        lines.append(f"{p.name} sha256={file_hash(p)}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig()
    if args.config:
        config = parse_config(Path(args.config).read_text())
    config = apply_env(config)
    if getattr(args, "set", None):
        config = apply_overrides(config, args.set)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if getattr(args, "out_dir", None):
        config = dataclasses.replace(config, out_dir=args.out_dir)
    if getattr(args, "steps", None) is not None:
        if args.cmd == "pretrain":
            config = dataclasses.replace(
                config, pretrain=dataclasses.replace(config.pretrain, steps=args.steps)
            )
        else:
            config = dataclasses.replace(
                config, train=dataclasses.replace(config.train, steps=args.steps)
            )
    # The run's global seed drives adapter training too.
    config = dataclasses.replace(
        config, train=dataclasses.replace(config.train, seed=config.seed)
    )
    return config


def _dataset(config: ExperimentConfig) -> SyntheticDataset:
    return SyntheticDataset(config.data)


def _theta_path(config, args) -> Path:
    explicit = getattr(args, "backbone", None)
    return Path(explicit) if explicit else Path(config.out_dir) / "backbone.pfly"


def _phi_path(config, args) -> Path:
    explicit = getattr(args, "adapter", None)
    return Path(explicit) if explicit else Path(config.out_dir) / "adapter.pfly"


def _load_theta(config: ExperimentConfig, args):
    path = _theta_path(config, args)
    if not path.exists():
        raise FileNotFoundError(f"backbone checkpoint not found: {path}")
    state = load_role(path, ROLE_THETA_FROZEN)
    params = init_backbone(config.backbone, config.data, seed=0)
    params.load_state_dict(state)
    params.freeze()
    return params


def _load_phi(config: ExperimentConfig, args):
    path = _phi_path(config, args)
    if not path.exists():
        raise FileNotFoundError(f"adapter checkpoint not found: {path}")
    state = load_role(path, ROLE_PHI)
    params = init_adapter(config.backbone, config.data, seed=0)
    params.load_state_dict(state)
    return params


# -- subcommand bodies --------------------------------------------------


def _cmd_defaults(config, args, out: Path) -> list[Path]:
    sys.stdout.write(render_config(ExperimentConfig()))
    return []


def _cmd_pretrain(config, args, out: Path) -> list[Path]:
    dataset = _dataset(config)
    result = pretrain(config.backbone, dataset, config.pretrain.steps,
                      config.pretrain, config.seed)
    ckpt = out / "backbone.pfly"
    entries = [Entry(name, ROLE_THETA_FROZEN, arr)
               for name, arr in result.params.state_dict().items()]
    save_checkpoint(ckpt, entries, overwrite=args.overwrite)
    loss_csv = out / "pretrain_loss.csv"
    _write_csv(loss_csv, "step,loss",
               ((i, v) for i, v in enumerate(result.loss_trace)))
    print(f"pretrained {config.pretrain.steps} steps; "
          f"final loss {result.loss_trace[-1]:.5f}; cfg margin {result.cfg_margin:.4f}")
    return [ckpt, loss_csv]


def _cmd_train_adapter(config, args, out: Path) -> list[Path]:
    dataset = _dataset(config)
    theta = _load_theta(config, args)
    train_cfg = config.train
    if train_cfg.train_styles is None:
        train_cfg = dataclasses.replace(
            train_cfg, train_styles=train_style_pool(dataset, config.eval)
        )
    periodic: list[Path] = []

    def checkpoint_fn(step, phi, opt):
        path = out / f"adapter_step{step:06d}.pfly"
        save_checkpoint(path, [
            Entry(n, ROLE_PHI, a) for n, a in phi.state_dict().items()
        ], overwrite=args.overwrite)
        periodic.append(path)

    result = train_adapter(theta, config.backbone, dataset, train_cfg,
                           checkpoint_fn=checkpoint_fn)
    ckpt = out / "adapter.pfly"
    entries = [Entry(name, ROLE_PHI, arr) for name, arr in result.phi.state_dict().items()]
    entries += [Entry(f"opt.{name}", ROLE_OPTIMIZER, arr)
                for name, arr in result.optimizer.state_dict().items()]
    save_checkpoint(ckpt, entries, overwrite=args.overwrite)
    loss_csv = out / "adapter_loss.csv"
    _write_csv(loss_csv, "step,loss",
               ((i, v) for i, v in enumerate(result.loss_trace)))
    print(f"trained adapter ({train_cfg.mode}) {train_cfg.steps} steps; "
          f"final loss {result.loss_trace[-1]:.5f}")
    return [ckpt, loss_csv] + periodic


def _cmd_pairgen(config, args, out: Path) -> list[Path]:
    dataset = _dataset(config)
    theta = _load_theta(config, args)
    rng = rng_for(config.seed, "pairgen")
    entries, meta_lines = [], []
    report = MetricReport("pairgen", config.seed, stable_hash(config))
    g = config.train.guidance
    for i in range(args.n_pairs):
        content = int(rng.integers(dataset.config.n_contents))
        style = int(rng.integers(dataset.config.n_styles))
        x0, caption = dataset.gen_sample(child_seed(rng), content, None)
        c_aug = dataclasses.replace(caption, style_id=style)
        t = float(rng.uniform(config.train.t_clamp, 1.0 - config.train.t_clamp))
        x1 = rng.standard_normal(x0.shape)
        pair = gen_pair(theta, interp_noise(x0, x1, t), t, c_aug, g)
        for field_name in ("x_t", "x_low", "x_high", "v_high"):
            entries.append(Entry(f"pair{i:04d}.{field_name}", ROLE_DATA,
                                 getattr(pair, field_name)))
        meta_lines.append(
            f"pair{i:04d}: t={pair.t!r} omega_low={g.omega_low!r} "
            f"omega_high={g.omega_high!r} content_id={content} style_id={style}"
        )
        report.record("semantic_gap", semantic_gap(pair))
        report.record("pair_motion_alignment", motion_alignment(pair.x_low, pair.x_high))
    ckpt = out / "pairs.pfly"
    save_checkpoint(ckpt, entries, overwrite=args.overwrite)
    meta = out / "pairs_meta.txt"
    meta.write_text("\n".join(meta_lines) + "\n")
    paths = metrics_emit(report, out)
    print(f"dumped {args.n_pairs} pairs; mean gap "
          f"{report.aggregate('semantic_gap'):.4f}")
    return [ckpt, meta] + paths


def _cmd_propagate(config, args, out: Path) -> list[Path]:
    dataset = _dataset(config)
    theta = _load_theta(config, args)
    phi = _load_phi(config, args)
    rng = rng_for(config.seed, "propagate-cli")
    content = args.content if args.content is not None else int(
        rng.integers(dataset.config.n_contents))
    from_style = args.from_style if args.from_style is not None else int(
        rng.integers(dataset.config.n_styles))
    to_style = args.to_style if args.to_style is not None else int(
        rng.integers(dataset.config.n_styles))
    sample_seed = args.sample_seed if args.sample_seed is not None else child_seed(rng)

    source, _ = dataset.gen_sample(sample_seed, content, from_style)
    target = dataset.oracle_edit(source, from_style, to_style)
    caption = ConditionCode(content, to_style)
    pack = ConditionPack(source=source, edited_first=target[0], caption=caption)
    noise = rng.standard_normal(source.shape)
    sampler_cfg = dataclasses.replace(config.sampler, omega=1.0)
    edited = propagate(theta, phi, pack, noise, sampler_cfg)

    report = MetricReport("propagate", config.seed, stable_hash(config))
    report.record("style_alignment", style_alignment(edited, target))
    report.record("style_alignment_source", style_alignment(source, target))
    report.record("motion_alignment", motion_alignment(edited, source))
    ckpt = out / "propagated.pfly"
    save_checkpoint(ckpt, [
        Entry("source", ROLE_DATA, source),
        Entry("oracle_target", ROLE_DATA, target),
        Entry("edited", ROLE_DATA, edited),
    ], overwrite=args.overwrite)
    paths = metrics_emit(report, out)
    print(f"propagated content={content} style {from_style}->{to_style}; "
          f"style_alignment {report.aggregate('style_alignment'):.4f} "
          f"(source {report.aggregate('style_alignment_source'):.4f})")
    return [ckpt] + paths


def _cmd_eval(config, args, out: Path) -> list[Path]:
    dataset = _dataset(config)
    theta = _load_theta(config, args)
    phi = _load_phi(config, args)
    pool = train_style_pool(dataset, config.eval)
    sampler_cfg = dataclasses.replace(config.sampler, omega=1.0)
    values = evaluate_propagation(
        theta, phi, dataset, sampler_cfg, config.seed,
        pool, config.eval.holdout_styles, config.eval.eval_samples,
    )
    report = MetricReport("eval", config.seed, stable_hash(config))
    for metric, vs in values.items():
        for v in vs:
            report.record(metric, v)
    paths = metrics_emit(report, out)
    print(f"eval over {config.eval.eval_samples} held-out edits: "
          f"style_alignment {report.aggregate('style_alignment'):.4f} vs "
          f"source {report.aggregate('style_alignment_source'):.4f}")
    return paths


def _cmd_ablate(config, args, out: Path) -> list[Path]:
    dataset = _dataset(config)
    theta = _load_theta(config, args)
    report = run_ablation(
        args.suite, theta, config.backbone, dataset,
        config.train, config.eval, config.sampler, config.seed,
    )
    paths = metrics_emit(report, out)
    summary = ", ".join(f"{m}={v:.4f}" for m, v in sorted(report.aggregates().items())
                        if not m.startswith("semantic_gap_w"))
    print(f"suite {args.suite}: {summary}" if summary else f"suite {args.suite} done")
    return paths


_COMMANDS = {
    "defaults": _cmd_defaults,
    "pretrain": _cmd_pretrain,
    "train-adapter": _cmd_train_adapter,
    "pairgen": _cmd_pairgen,
    "propagate": _cmd_propagate,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowprop",
        description="Edit-propagation training on synthetic video latents.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--config", help="path to a key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="global seed")
        p.add_argument("--out-dir", help="output directory")
        p.add_argument("--overwrite", action="store_true",
                       help="replace existing output files")

    sub.add_parser("defaults", help="print the default config")

    p = sub.add_parser("pretrain", help="pretrain and freeze the backbone")
    common(p)
    p.add_argument("--steps", type=int, help="pretraining steps")

    p = sub.add_parser("train-adapter", help="train the propagation adapter")
    common(p)
    p.add_argument("--steps", type=int, help="adapter training steps")
    p.add_argument("--backbone", help="backbone checkpoint path")

    p = sub.add_parser("pairgen", help="dump on-the-fly pairs and gap stats")
    common(p)
    p.add_argument("--backbone", help="backbone checkpoint path")
    p.add_argument("--n-pairs", type=int, default=16)

    p = sub.add_parser("propagate", help="propagate one style edit")
    common(p)
    p.add_argument("--backbone", help="backbone checkpoint path")
    p.add_argument("--adapter", help="adapter checkpoint path")
    p.add_argument("--content", type=int)
    p.add_argument("--from-style", type=int)
    p.add_argument("--to-style", type=int)
    p.add_argument("--sample-seed", type=int)

    p = sub.add_parser("eval", help="score held-out edit propagation")
    common(p)
    p.add_argument("--backbone", help="backbone checkpoint path")
    p.add_argument("--adapter", help="adapter checkpoint path")

    p = sub.add_parser("ablate", help="run an ablation suite")
    common(p)
    p.add_argument("--backbone", help="backbone checkpoint path")
    p.add_argument("--suite", required=True, choices=SUITES)

    return parser


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.cmd == "defaults":
        _cmd_defaults(None, args, Path("."))
        return 0

    try:
        config = _load_config(args)
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        outputs = _COMMANDS[args.cmd](config, args, out)
        wall = time.perf_counter() - started
        _write_manifest(out, args.cmd, config, outputs, wall)
    except Exception as e:  # surfaced as exit code 1 per the CLI contract
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

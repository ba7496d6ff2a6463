"""Plain-text experiment configuration.

One flat `key = value` document covers every component config; keys are
dotted paths into nested dataclasses (`train.guidance.omega_high = 7.0`).
Rendering follows field-definition order and parse(render(c)) == c holds
exactly. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field

from .ablations import EvalConfig
from .backbone import BackboneConfig, PretrainConfig
from .errors import ConfigError
from .gmfm import TrainConfig
from .sampler import SamplerConfig
from .synthvid import SynthConfig

ENV_OUT_DIR = "FLOWPROP_OUT_DIR"
ENV_SEED = "FLOWPROP_SEED"


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/out"
    data: SynthConfig = field(default_factory=SynthConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _is_dataclass_type(t) -> bool:
    return isinstance(t, type) and dataclasses.is_dataclass(t)


def _value_to_str(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_value_to_str(v) for v in value)
    return str(value)


def _str_to_value(raw: str, typ, key: str):
    origin = typing.get_origin(typ)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(typ) if a is not type(None)]
        if raw == "none":
            return None
        return _str_to_value(raw, args[0], key)
    if typ is bool:
        low = raw.lower()
        if low not in ("true", "false"):
            raise ConfigError(f"{key}: expected true/false, got {raw!r}")
        return low == "true"
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected integer, got {raw!r}") from None
    if typ is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected float, got {raw!r}") from None
    if typ is str:
        return raw
    if origin is tuple:
        elem = typing.get_args(typ)[0]
        if raw == "":
            return ()
        return tuple(_str_to_value(part.strip(), elem, key) for part in raw.split(","))
    raise ConfigError(f"{key}: unsupported config field type {typ}")


def _walk_render(obj, prefix: str, lines: list[str]) -> None:
    hints = typing.get_type_hints(type(obj))
    for f in dataclasses.fields(obj):
        key = f"{prefix}{f.name}"
        value = getattr(obj, f.name)
        if _is_dataclass_type(hints[f.name]):
            _walk_render(value, f"{key}.", lines)
        else:
            lines.append(f"{key} = {_value_to_str(value)}")


def render_config(config: ExperimentConfig) -> str:
    lines: list[str] = []
    _walk_render(config, "", lines)
    return "\n".join(lines) + "\n"


def _build(cls, prefix: str, table: dict[str, str], consumed: set[str]):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}{f.name}"
        typ = hints[f.name]
        if _is_dataclass_type(typ):
            kwargs[f.name] = _build(typ, f"{key}.", table, consumed)
        elif key in table:
            kwargs[f.name] = _str_to_value(table[key], typ, key)
            consumed.add(key)
        # else: dataclass default applies
    return cls(**kwargs)


def parse_config(text: str) -> ExperimentConfig:
    """Parse a key/value document; missing keys fall back to defaults."""
    table: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, _, raw = stripped.partition("=")
        table[key.strip()] = raw.strip()
    consumed: set[str] = set()
    config = _build(ExperimentConfig, "", table, consumed)
    unknown = set(table) - consumed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return config


def apply_overrides(config: ExperimentConfig, pairs: list[str]) -> ExperimentConfig:
    """Apply `key=value` override strings on top of a parsed config."""
    if not pairs:
        return config
    table = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(f"override must look like key=value, got {p!r}")
        key, _, raw = p.partition("=")
        table[key.strip()] = raw.strip()
    base = render_config(config).splitlines()
    merged: dict[str, str] = {}
    for line in base:
        key, _, raw = line.partition("=")
        merged[key.strip()] = raw.strip()
    for key, raw in table.items():
        if key not in merged:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = raw
    text = "\n".join(f"{k} = {v}" for k, v in merged.items())
    return parse_config(text)


def apply_env(config: ExperimentConfig, environ=os.environ) -> ExperimentConfig:
    """Honor the two supported environment overrides: out_dir and seed."""
    out = config
    if ENV_OUT_DIR in environ:
        out = dataclasses.replace(out, out_dir=environ[ENV_OUT_DIR])
    if ENV_SEED in environ:
        try:
            out = dataclasses.replace(out, seed=int(environ[ENV_SEED]))
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer") from None
    return out

"""YAML run configuration with sections ``model``, ``optim``, ``data``, ``filter``, ``pixel``, ``norm``."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .backbone import PRESETS, ModelConfig
from .core import ConfigError
from .filtering import DEFAULT_EPS, DEFAULT_R, IMAGENET_MEAN, IMAGENET_STD
from .training import DESK_OPTIM, DataConfig, OptimizerConfig

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} | {"preset"}
_OPTIM_KEYS = {f.name for f in fields(OptimizerConfig)}
_SECTIONS = {
    "model": _MODEL_KEYS,
    "optim": _OPTIM_KEYS,
    "data": {"archive", "datasets", "horizon_multiples", "lookback_multiples", "grayscale"},
    "filter": {"enabled", "max_reject_factor"},
    "pixel": {"mean", "std"},
    "norm": {"r", "eps"},
    "train": {"log_every"},
}


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=lambda: PRESETS["desk"])
    optim: OptimizerConfig = DESK_OPTIM
    data: DataConfig = DataConfig()
    archive: str | None = None
    datasets: list | None = None
    log_every: int = 100


def _check_keys(raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    for section, body in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key in body:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")


def parse_config(raw: dict | None) -> RunConfig:
    raw = raw or {}
    _check_keys(raw)
    sec = {k: (raw.get(k) or {}) for k in _SECTIONS}
    model_raw = dict(sec["model"])
    preset = model_raw.pop("preset", "desk")
    if preset not in PRESETS:
        raise ConfigError(f"unknown model preset {preset!r}")
    try:
        model = PRESETS[preset].replace(**model_raw)
        optim_raw = {**{f.name: getattr(DESK_OPTIM, f.name) for f in fields(OptimizerConfig)},
                     **sec["optim"]}
        optim = OptimizerConfig(**optim_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    data_raw = sec["data"]
    pixel = sec["pixel"]
    norm = sec["norm"]
    data = DataConfig(
        horizon_multiples=tuple(data_raw.get("horizon_multiples", (1, 2, 4))),
        lookback_multiples=tuple(data_raw.get("lookback_multiples", (1, 2, 3, 4))),
        use_filter=bool(sec["filter"].get("enabled", True)),
        grayscale=bool(data_raw.get("grayscale", False)),
        r=float(norm.get("r", DEFAULT_R)),
        eps=float(norm.get("eps", DEFAULT_EPS)),
        pixel_mean=tuple(float(x) for x in pixel.get("mean", IMAGENET_MEAN)),
        pixel_std=tuple(float(x) for x in pixel.get("std", IMAGENET_STD)),
        max_reject_factor=int(sec["filter"].get("max_reject_factor", 10)),
    )
    if not 0 < data.r <= 1:
        raise ConfigError(f"norm.r must lie in (0, 1], got {data.r}")
    if len(data.pixel_mean) != 3 or len(data.pixel_std) != 3 or min(data.pixel_std) <= 0:
        raise ConfigError("pixel.mean and pixel.std need three values, std positive")
    return RunConfig(model, optim, data, data_raw.get("archive"), data_raw.get("datasets"),
                     int(sec["train"].get("log_every", 100)))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(raw)
    if cfg.archive is not None and not Path(cfg.archive).is_absolute():
        cfg.archive = str((path.parent / cfg.archive).resolve())
    return cfg

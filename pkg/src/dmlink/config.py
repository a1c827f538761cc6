"""Experiment configuration: JSON file in, validated dataclass out."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import dsp
from .laser import DEFAULT_DEVICE_TABLE, LaserParams, derive_params


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a CLI run needs, with desk-scale defaults."""

    symbol_rate_gbd: float = 25.0
    seed: int = 1
    i_bias_ma: float = 75.0         # probe/eye operating point and BL bias
    i_pp_ma: float = 80.0
    lpf_fraction: float = 0.9
    snr_db: float = 22.0
    laser: dict = field(default_factory=dict)   # LaserParams overrides
    dataset_frames: int = 640
    surrogate_epochs: int = 20
    surrogate_batch: int = 4
    surrogate_lr: float = 1e-3
    ae_frames: int = 1024
    ae_epochs: int = 3
    ae_lr: float = 1e-3
    vnle_steps: int = 300
    pilot_frames: int = 16
    eval_frames: int = 64
    out_dir: str = "runs"

    def laser_params(self) -> LaserParams:
        unknown = set(self.laser) - {f.name for f in fields(LaserParams)}
        if unknown:
            raise ConfigError(f"unknown laser parameter overrides: "
                              f"{sorted(unknown)}")
        return derive_params({**DEFAULT_DEVICE_TABLE, **self.laser})

    def link_config(self) -> dsp.LinkConfig:
        return dsp.LinkConfig(symbol_rate=self.symbol_rate_gbd * 1e9,
                              i_bias=self.i_bias_ma * 1e-3,
                              i_pp=self.i_pp_ma * 1e-3,
                              lpf_fraction=self.lpf_fraction,
                              snr_target_db=self.snr_db)

    def rate_tag(self) -> str:
        return f"{self.symbol_rate_gbd:g}gbd"


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.symbol_rate_gbd <= 0.0:
        raise ConfigError("symbol_rate_gbd must be positive")
    if not 50.0 <= cfg.i_bias_ma <= 100.0:
        raise ConfigError(f"i_bias_ma must lie in the [50, 100] mA bound, "
                          f"got {cfg.i_bias_ma:g} mA")
    if not 0.0 <= cfg.i_pp_ma <= 80.0:
        raise ConfigError(f"i_pp_ma must lie in the [0, 80] mA bound, "
                          f"got {cfg.i_pp_ma:g} mA")
    if not 0.0 < cfg.lpf_fraction < 1.0:
        raise ConfigError("lpf_fraction must be in (0, 1)")
    for name in ("dataset_frames", "surrogate_epochs", "surrogate_batch",
                 "ae_frames", "ae_epochs", "vnle_steps", "pilot_frames",
                 "eval_frames"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{name} must be at least 1")
    for name in ("surrogate_lr", "ae_lr"):
        if getattr(cfg, name) <= 0.0:
            raise ConfigError(f"{name} must be positive")
    if not isinstance(cfg.laser, dict):
        raise ConfigError("laser must be an object of parameter overrides")
    cfg.laser_params()
    cfg.link_config()
    return cfg


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None


def parse_config(path) -> ExperimentConfig:
    """Read and validate a JSON config; an empty file means defaults."""
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        return _validate(ExperimentConfig())

    def reject_duplicates(pairs):
        seen = {}
        for key, value in pairs:
            if key in seen:
                where = _line_of(text, key)
                at = f" (line {where})" if where else ""
                raise ConfigError(f"duplicate key {key!r}{at} in {path}")
            seen[key] = value
        return seen

    try:
        raw = json.loads(text, object_pairs_hook=reject_duplicates)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON at line {err.lineno}: "
                          f"{err.msg}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            where = _line_of(text, key)
            at = f" (line {where})" if where else ""
            raise ConfigError(
                f"unknown key {key!r}{at} in {path}; "
                f"known keys: {', '.join(sorted(known))}")
    try:
        cfg = ExperimentConfig(**raw)
    except TypeError as err:
        raise ConfigError(f"{path}: {err}") from err
    return _validate(cfg)


def with_overrides(cfg: ExperimentConfig, seed: int | None = None,
                   out_dir: str | None = None) -> ExperimentConfig:
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if out_dir is not None:
        updates["out_dir"] = out_dir
    return dataclasses.replace(cfg, **updates) if updates else cfg

"""Run configuration: refinement, motion and schedule settings, loadable from YAML.

Recognised top-level keys (all optional)::

    preset: igs-s | igs-l
    w: 5                  # keyframe interval
    extractor: synthetic  # synthetic | oracle | path/to/maps.igsf
    background: [0, 0, 0]
    refine:  {iterations, densify_interval, lambda, n_max, grad_threshold,
              prune_opacity, split_fraction, lr_position, lr_rotation, lr_scale,
              lr_opacity, lr_sh, beta1, beta2, seed, scene_extent,
              keep_best}
    motion:  {k, m_anchors, distance_scale, channels, grid_width, grid_height,
              views, strict_view_average, fps_seed_index}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from ..motion import MotionConfig


@dataclass
class RefineConfig:
    iterations: int = 50
    densify_interval: int = 20
    lam: float = 0.2
    n_max: int = 150_000
    grad_threshold: float = 2e-4
    prune_opacity: float = 5e-3
    split_fraction: float = 0.01
    lr_position: float = 1.6e-3  # multiplied by the scene extent
    lr_rotation: float = 1e-2
    lr_scale: float = 5e-3
    lr_opacity: float = 5e-2
    lr_sh: float = 2.5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    scene_extent: Optional[float] = None
    keep_best: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.densify_interval < 1 or self.n_max < 0:
            raise ValueError("densify_interval must be >= 1 and n_max >= 0")


IGS_S = RefineConfig(iterations=50)
IGS_L = RefineConfig(iterations=100)
PRESETS = {"igs-s": IGS_S, "igs-l": IGS_L}

_REFINE_ALIASES = {"lambda": "lam"}
_MOTION_ALIASES = {"m_anchors": "anchors"}


@dataclass
class StreamConfig:
    w: int = 5
    extractor: str = "synthetic"
    background: tuple = (0.0, 0.0, 0.0)
    refine: RefineConfig = field(default_factory=RefineConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)


def _apply(obj, values: dict, aliases: dict):
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, val in (values or {}).items():
        name = aliases.get(key, key)
        if name not in names:
            raise ValueError(f"unknown configuration key {key!r}")
        changes[name] = val
    return dataclasses.replace(obj, **changes)


def preset(name: str) -> RefineConfig:
    try:
        return dataclasses.replace(PRESETS[name.lower()])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def config_from_dict(data: dict, preset_name: Optional[str] = None) -> StreamConfig:
    data = dict(data or {})
    name = preset_name or data.pop("preset", None)
    data.pop("preset", None)
    refine = preset(name) if name else RefineConfig()
    cfg = StreamConfig(refine=_apply(refine, data.pop("refine", {}), _REFINE_ALIASES))
    cfg.motion = _apply(cfg.motion, data.pop("motion", {}), _MOTION_ALIASES)
    cfg = _apply(cfg, data, {})
    if cfg.w < 1:
        raise ValueError("w must be >= 1")
    cfg.background = tuple(float(b) for b in cfg.background)
    return cfg


def load_config(path=None, preset_name: Optional[str] = None) -> StreamConfig:
    data = yaml.safe_load(Path(path).read_text()) if path else {}
    if data is not None and not isinstance(data, dict):
        raise ValueError("configuration file must hold a mapping")
    return config_from_dict(data, preset_name)


def config_to_dict(cfg: StreamConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["background"] = list(cfg.background)
    out["refine"]["lambda"] = out["refine"].pop("lam")
    out["motion"]["m_anchors"] = out["motion"].pop("anchors")
    return out

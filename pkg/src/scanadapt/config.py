"""Run configuration: strict YAML schema with embedded defaults.

Every setting has a default mirroring the reference operating point, so
an empty config is valid. Unknown keys anywhere in the tree are hard
errors; a typo can therefore never silently fall back to a default.
"""

import math
from typing import Optional

import yaml

from .augment import AugmentConfig, StageToggles
from .features import FeatureConfig
from .train import FilterConfig, MixConfig, TrainConfig


class ConfigError(Exception):
    """Invalid, unparseable or unknown configuration input."""


_SCENE_KEYS = {
    "extent", "beams", "ground_planes", "buildings", "poles", "vehicles",
    "vegetation", "fences", "base_noise", "density_decay", "intensity_shift",
    "target_points", "sensor_height",
}

DEFAULTS = {
    "seed": 0,
    "out": None,
    "scenes": {
        "source_count": 10,
        "target_count": 10,
        "source": {},
        "target": {},
    },
    "data": {
        "source": None,
        "target": None,
        "num_classes": 6,
        "class_map": None,
        "checkpoint": None,
        "target_labels": None,
        "predictions": None,
        "telemetry": None,
    },
    "features": {
        "max_range": 80.0,
        "min_height": -3.0,
        "max_height": 5.0,
        "radius": 1.0,
        "density_cap": 64,
        "planarity_scale": 0.1,
    },
    "filter": {
        "alpha": 0.5,
        "bottom_fraction": 0.01,
        "momentum_global": 0.1,
        "momentum_class": 0.01,
        "period": 500,
        "warmup_len": 500,
        "mode": "dynamic",
        "fixed_threshold": 0.85,
    },
    "augment": {
        "bin_step": 5.0,
        "soft_half_width": 0.1,
        "jitter_sigma_min": 0.005,
        "jitter_sigma_max": 0.05,
        "height_sigma": 0.002,
        "height_low": 0.2,
        "height_high": 0.8,
        "jitter_clamp": 0.1,
        "local_rotation": math.pi / 2,
        "local_scale_low": 0.95,
        "local_scale_high": 1.05,
        "local_region_count": 4,
        "global_rotation": math.pi / 4,
        "global_scale_low": 0.95,
        "global_scale_high": 1.05,
        "global_translation": 0.2,
        "mode": "prior",
        "uniform_sigma": 0.0275,
        "stages": {
            "density": True,
            "distance_jitter": True,
            "height_jitter": True,
            "local_affine": True,
            "global_affine": True,
        },
    },
    "mix": {
        "regions": [3, 4, 5, 6],
        "pitch_low_deg": -25.0,
        "pitch_high_deg": 3.0,
    },
    "trainer": {
        "hidden": 16,
        "learning_rate": 0.2,
        "pretrain_epochs": 40,
        "iterations": 200,
        "batch_size": 1,
        "teacher_momentum": 0.9,
        "teacher_period": 500,
        "seg_weight": 1.0,
        "consistency_weight": 1.0,
        "dump_first_iteration": False,
    },
}


def _merge(defaults, user, path, open_keys=None):
    """Recursively overlay `user` onto `defaults`, rejecting unknown keys."""
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(user).__name__}")
    merged = {}
    for key, default in defaults.items():
        merged[key] = default.copy() if isinstance(default, dict) else default
    for key, value in user.items():
        here = f"{path}.{key}" if path else str(key)
        if open_keys is not None:
            if key not in open_keys:
                raise ConfigError(f"unknown config key: {here}")
            merged[key] = value
            continue
        if key not in defaults:
            raise ConfigError(f"unknown config key: {here}")
        default = defaults[key]
        if isinstance(default, dict) and key != "scenes":
            merged[key] = _merge(default, value or {}, here)
        elif key == "scenes":
            merged[key] = _merge_scenes(value or {}, here)
        else:
            merged[key] = value
    return merged


def _merge_scenes(user, path):
    merged = {
        "source_count": DEFAULTS["scenes"]["source_count"],
        "target_count": DEFAULTS["scenes"]["target_count"],
        "source": {},
        "target": {},
    }
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: expected a mapping")
    for key, value in user.items():
        here = f"{path}.{key}"
        if key in ("source_count", "target_count"):
            merged[key] = value
        elif key in ("source", "target"):
            merged[key] = _merge({}, value or {}, here, open_keys=_SCENE_KEYS)
        else:
            raise ConfigError(f"unknown config key: {here}")
    return merged


def load_raw(path: Optional[str]) -> dict:
    """Parse and validate a YAML config file; None gives pure defaults."""
    if path is None:
        return _merge(DEFAULTS, {}, "")
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})")
    if data is None:
        data = {}
    return _merge(DEFAULTS, data, "")


class RunConfig:
    """Typed view over a merged config tree; builds the module configs."""

    def __init__(self, raw: dict):
        self.raw = raw

    @classmethod
    def load(cls, path: Optional[str] = None, seed: Optional[int] = None,
             out: Optional[str] = None) -> "RunConfig":
        raw = load_raw(path)
        if seed is not None:
            raw["seed"] = seed
        if out is not None:
            raw["out"] = out
        return cls(raw)

    def _build(self, factory, section, **extra):
        try:
            return factory(**{**section, **extra})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc))

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def out(self) -> Optional[str]:
        return self.raw["out"]

    @property
    def num_classes(self) -> int:
        return int(self.raw["data"]["num_classes"])

    @property
    def data(self) -> dict:
        return self.raw["data"]

    @property
    def scenes(self) -> dict:
        return self.raw["scenes"]

    def feature_cfg(self) -> FeatureConfig:
        return self._build(FeatureConfig, self.raw["features"])

    def filter_cfg(self) -> FilterConfig:
        return self._build(FilterConfig, self.raw["filter"])

    def augment_cfg(self) -> AugmentConfig:
        block = {
            k: v
            for k, v in self.raw["augment"].items()
            if k not in ("mode", "uniform_sigma", "stages")
        }
        return self._build(AugmentConfig, block)

    def stages(self) -> StageToggles:
        return self._build(StageToggles, self.raw["augment"]["stages"])

    def mix_cfg(self) -> MixConfig:
        block = self.raw["mix"]
        try:
            return MixConfig(
                region_choices=tuple(int(r) for r in block["regions"]),
                pitch_low=math.radians(float(block["pitch_low_deg"])),
                pitch_high=math.radians(float(block["pitch_high_deg"])),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc))

    def train_cfg(self) -> TrainConfig:
        return self._build(
            TrainConfig,
            {k: v for k, v in self.raw["trainer"].items() if k != "dump_first_iteration"},
            augment_mode=self.raw["augment"]["mode"],
            uniform_sigma=self.raw["augment"]["uniform_sigma"],
            stages=self.stages(),
        )

    @property
    def dump_first_iteration(self) -> bool:
        return bool(self.raw["trainer"]["dump_first_iteration"])

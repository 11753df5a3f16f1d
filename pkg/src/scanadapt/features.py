"""Handcrafted per-point features for the desk-scale classifier.

Five features, all normalized into [0, 1]:

0. range / max_range (clamped)
1. height, affinely mapped from [min_height, max_height] (clamped)
2. local density: neighbor count within `radius`, capped and divided
   by the cap
3. planarity proxy: 1 - std(z of neighbors) / planarity_scale, clamped;
   near 1 on flat patches, near 0 on vertical or scattered structure
4. intensity (0 where the cloud has none)

The neighborhood statistics come from a single radius query shared by
features 2 and 3.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .cloud import (
    DEFAULT_MAX_HEIGHT,
    DEFAULT_MAX_RANGE,
    DEFAULT_MIN_HEIGHT,
    PointCloud,
    normalized_heights,
    normalized_ranges,
)

NUM_FEATURES = 5


@dataclass(frozen=True)
class FeatureConfig:
    max_range: float = DEFAULT_MAX_RANGE
    min_height: float = DEFAULT_MIN_HEIGHT
    max_height: float = DEFAULT_MAX_HEIGHT
    radius: float = 1.0
    density_cap: int = 64
    planarity_scale: float = 0.1

    def __post_init__(self):
        if self.radius <= 0 or self.density_cap < 1 or self.planarity_scale <= 0:
            raise ValueError("radius, density_cap and planarity_scale must be positive")
        if self.max_range <= 0 or self.min_height >= self.max_height:
            raise ValueError("bad normalization bounds")


def compute_features(cloud: PointCloud, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """(N, 5) feature matrix with every entry in [0, 1]."""
    n = len(cloud)
    out = np.zeros((n, NUM_FEATURES))
    if n == 0:
        return out
    out[:, 0] = normalized_ranges(cloud, cfg.max_range)
    out[:, 1] = normalized_heights(cloud, cfg.min_height, cfg.max_height)
    counts, z_std = kernels.radius_stats(cloud.positions, cfg.radius)
    out[:, 2] = np.minimum(counts / cfg.density_cap, 1.0)
    out[:, 3] = np.clip(1.0 - z_std / cfg.planarity_scale, 0.0, 1.0)
    if cloud.intensity is not None:
        out[:, 4] = np.clip(cloud.intensity, 0.0, 1.0)
    return out

"""Point cloud and label containers plus basic per-point geometry."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels

#: Label value marking points excluded from statistics and losses.
UNKNOWN_LABEL = -1

#: Range (meters) used to normalize distances into [0, 1].
DEFAULT_MAX_RANGE = 80.0

#: Height window (meters) used to normalize z into [0, 1].
DEFAULT_MIN_HEIGHT = -3.0
DEFAULT_MAX_HEIGHT = 5.0


@dataclass
class PointCloud:
    """N points with 3D positions in meters and optional reflectance.

    positions is (N, 3) float64; intensity, when present, is (N,) in [0, 1].
    All coordinates must be finite.
    """

    positions: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        if not np.isfinite(self.positions).all():
            bad = int(np.argwhere(~np.isfinite(self.positions).all(axis=1))[0, 0])
            raise ValueError(f"non-finite coordinate at point {bad}")
        if self.intensity is not None:
            self.intensity = np.ascontiguousarray(self.intensity, dtype=np.float64)
            if self.intensity.shape != (len(self),):
                raise ValueError(
                    f"intensity length {self.intensity.shape} does not match "
                    f"{len(self)} points"
                )

    def __len__(self) -> int:
        return self.positions.shape[0]

    def select(self, index) -> "PointCloud":
        """New cloud with the rows selected by a mask or index array."""
        inten = None if self.intensity is None else self.intensity[index]
        return PointCloud(self.positions[index], inten)

    def copy(self) -> "PointCloud":
        inten = None if self.intensity is None else self.intensity.copy()
        return PointCloud(self.positions.copy(), inten)


@dataclass
class LabelSet:
    """Per-point integer class ids with a reserved -1 unknown sentinel."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        bad = (self.labels < UNKNOWN_LABEL) | (self.labels >= self.num_classes)
        if bad.any():
            raise ValueError(
                f"label {int(self.labels[bad][0])} outside "
                f"[-1, {self.num_classes - 1}]"
            )

    def __len__(self) -> int:
        return self.labels.shape[0]

    def select(self, index) -> "LabelSet":
        return LabelSet(self.labels[index], self.num_classes)

    def copy(self) -> "LabelSet":
        return LabelSet(self.labels.copy(), self.num_classes)


def ranges(cloud: PointCloud) -> np.ndarray:
    """Per-point Euclidean distance from the sensor at the origin."""
    return kernels.point_ranges(cloud.positions)


def normalize_unit(values: np.ndarray, max_value: float) -> np.ndarray:
    """values / max_value clamped into [0, 1]."""
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    return np.clip(np.asarray(values, dtype=np.float64) / max_value, 0.0, 1.0)


def normalized_ranges(cloud: PointCloud, max_range: float = DEFAULT_MAX_RANGE) -> np.ndarray:
    return normalize_unit(ranges(cloud), max_range)


def normalized_heights(
    cloud: PointCloud,
    min_height: float = DEFAULT_MIN_HEIGHT,
    max_height: float = DEFAULT_MAX_HEIGHT,
) -> np.ndarray:
    """z shifted by the window floor and scaled to [0, 1]."""
    if max_height <= min_height:
        raise ValueError("height window must have positive span")
    return normalize_unit(cloud.positions[:, 2] - min_height, max_height - min_height)

"""Pitch-region scan mixing.

Two scans are cut into the same equal-width pitch intervals and the
regions are interleaved: one mixed scan takes the even regions from the
target scan and the odd ones from the source, the other takes the exact
complement. Together the pair uses every region of every input exactly
once, so points are conserved and each output point traces back to one
input point with its label intact.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import kernels, scanio
from .cloud import LabelSet, PointCloud

# Vertical field of view of a typical automotive rotating scanner.
DEFAULT_PITCH_BOUNDS = (np.deg2rad(-25.0), np.deg2rad(3.0))

REGION_CHOICES = (3, 4, 5, 6)

SOURCE_TO_TARGET = "s2t"
TARGET_TO_SOURCE = "t2s"

PROVENANCE_SOURCE = 0
PROVENANCE_TARGET = 1


@dataclass(frozen=True)
class RegionPartition:
    """Per-point pitch region assignment for one cloud."""

    region: np.ndarray  # int64, values in [0, num_regions)
    num_regions: int
    edges: np.ndarray  # radians, length num_regions + 1

    def __post_init__(self):
        object.__setattr__(
            self, "region", np.ascontiguousarray(self.region, dtype=np.int64)
        )
        object.__setattr__(
            self, "edges", np.ascontiguousarray(self.edges, dtype=np.float64)
        )
        if self.edges.shape[0] != self.num_regions + 1:
            raise ValueError("edges must have num_regions + 1 entries")
        if self.region.size and (
            self.region.min() < 0 or self.region.max() >= self.num_regions
        ):
            raise ValueError("region indices out of range")

    def __len__(self) -> int:
        return self.region.shape[0]


@dataclass
class MixedScan:
    cloud: PointCloud
    labels: LabelSet
    provenance: np.ndarray  # uint8, 0 = source, 1 = target
    direction: str

    def __post_init__(self):
        self.provenance = np.ascontiguousarray(self.provenance, dtype=np.uint8)
        n = len(self.cloud)
        if len(self.labels.labels) != n or self.provenance.shape[0] != n:
            raise ValueError("cloud, labels and provenance lengths differ")
        if self.direction not in (SOURCE_TO_TARGET, TARGET_TO_SOURCE):
            raise ValueError(f"unknown mixing direction {self.direction!r}")

    def __len__(self) -> int:
        return len(self.cloud)


def pitch_angles(cloud: PointCloud) -> np.ndarray:
    """Elevation angle atan2(z, sqrt(x^2+y^2)) per point; origin maps to 0."""
    return kernels.pitch_angles(cloud.positions)


def partition(
    cloud: PointCloud,
    num_regions: int,
    bounds: tuple = DEFAULT_PITCH_BOUNDS,
) -> RegionPartition:
    """Assign each point to one of `num_regions` equal-width pitch intervals.

    Pitches outside the bounds clamp into the nearest end region, so the
    assignment is total.
    """
    if num_regions < 2:
        raise ValueError("need at least 2 regions")
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < hi:
        raise ValueError("pitch bounds must satisfy min < max")
    edges = np.linspace(lo, hi, num_regions + 1)
    pitch = pitch_angles(cloud)
    width = (hi - lo) / num_regions
    idx = np.floor((np.clip(pitch, lo, hi) - lo) / width).astype(np.int64)
    np.clip(idx, 0, num_regions - 1, out=idx)
    return RegionPartition(idx, num_regions, edges)


def _check_pair(part_src, part_tgt, src_cloud, tgt_cloud, src_labels, tgt_labels):
    if len(part_src) != len(src_cloud) or len(part_tgt) != len(tgt_cloud):
        raise ValueError("partition and scan lengths differ")
    if len(src_labels.labels) != len(src_cloud) or len(tgt_labels.labels) != len(tgt_cloud):
        raise ValueError("labels and scan lengths differ")
    if part_src.num_regions != part_tgt.num_regions or not np.array_equal(
        part_src.edges, part_tgt.edges
    ):
        raise ValueError("both scans of a pair must share the partition")


def lasermix(
    src_cloud: PointCloud,
    src_labels: LabelSet,
    tgt_cloud: PointCloud,
    tgt_labels: LabelSet,
    part_src: RegionPartition,
    part_tgt: RegionPartition,
    direction: str,
) -> MixedScan:
    """Interleave pitch regions of a source and a target scan.

    Direction s2t keeps even-indexed regions from the target and odd ones
    from the source; t2s is the exact complement. Output points are the
    selected source points (original order) followed by the selected
    target points. Target labels may contain -1; they ride along.
    """
    _check_pair(part_src, part_tgt, src_cloud, tgt_cloud, src_labels, tgt_labels)
    if direction == SOURCE_TO_TARGET:
        src_take = part_src.region % 2 == 1
        tgt_take = part_tgt.region % 2 == 0
    elif direction == TARGET_TO_SOURCE:
        src_take = part_src.region % 2 == 0
        tgt_take = part_tgt.region % 2 == 1
    else:
        raise ValueError(f"unknown mixing direction {direction!r}")

    src_part_cloud = src_cloud.select(src_take)
    tgt_part_cloud = tgt_cloud.select(tgt_take)
    positions = np.concatenate([src_part_cloud.positions, tgt_part_cloud.positions])
    if src_cloud.intensity is not None and tgt_cloud.intensity is not None:
        intensity = np.concatenate([src_part_cloud.intensity, tgt_part_cloud.intensity])
    else:
        intensity = None
    num_classes = src_labels.num_classes
    if tgt_labels.num_classes != num_classes:
        raise ValueError("label sets disagree on class count")
    labels = np.concatenate(
        [src_labels.labels[src_take], tgt_labels.labels[tgt_take]]
    )
    provenance = np.concatenate(
        [
            np.full(int(src_take.sum()), PROVENANCE_SOURCE, dtype=np.uint8),
            np.full(int(tgt_take.sum()), PROVENANCE_TARGET, dtype=np.uint8),
        ]
    )
    return MixedScan(
        PointCloud(positions, intensity), LabelSet(labels, num_classes), provenance, direction
    )


def mix_pair(
    src_cloud, src_labels, tgt_cloud, tgt_labels, num_regions, bounds=DEFAULT_PITCH_BOUNDS
):
    """Both mixing directions of one scan pair under a shared partition."""
    part_src = partition(src_cloud, num_regions, bounds)
    part_tgt = partition(tgt_cloud, num_regions, bounds)
    s2t = lasermix(
        src_cloud, src_labels, tgt_cloud, tgt_labels, part_src, part_tgt, SOURCE_TO_TARGET
    )
    t2s = lasermix(
        src_cloud, src_labels, tgt_cloud, tgt_labels, part_src, part_tgt, TARGET_TO_SOURCE
    )
    return s2t, t2s


def save_mixed_scan(mixed: MixedScan, scan_path, label_path, provenance_path) -> None:
    """Write a mixed scan in the binary scan/label formats plus a one
    byte per point provenance sidecar."""
    scanio.save_scan(scan_path, mixed.cloud)
    scanio.save_labels(label_path, mixed.labels)
    scanio.atomic_write_bytes(os.fspath(provenance_path), mixed.provenance.tobytes())


def load_provenance(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return np.frombuffer(fh.read(), dtype=np.uint8).copy()

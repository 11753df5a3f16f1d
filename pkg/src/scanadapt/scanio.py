"""Binary scan and label file I/O (KITTI velodyne layout).

Scan files are headerless sequences of little-endian float32 records
(x, y, z, intensity). Label files are headerless little-endian uint32
records whose lower 16 bits carry the semantic class; the upper 16 bits
(instance id) are discarded on read and written as zero.
"""

import os
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import yaml

from .cloud import UNKNOWN_LABEL, LabelSet, PointCloud

SCAN_RECORD_BYTES = 16
LABEL_RECORD_BYTES = 4


class ScanFormatError(ValueError):
    """Malformed scan or label file."""


def load_scan(path: Union[str, Path]) -> PointCloud:
    """Read a binary scan file into a PointCloud.

    Raises ScanFormatError when the byte length is not a multiple of 16
    or a coordinate is non-finite (the message names the point index).
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % SCAN_RECORD_BYTES != 0:
        raise ScanFormatError(
            f"{path}: {len(raw)} bytes is not a multiple of {SCAN_RECORD_BYTES}"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    coords = data[:, :3]
    finite = np.isfinite(coords).all(axis=1)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise ScanFormatError(f"{path}: non-finite coordinate at point {bad}")
    return PointCloud(coords.astype(np.float64), data[:, 3].astype(np.float64))


def save_scan(path: Union[str, Path], cloud: PointCloud) -> None:
    """Write a PointCloud as float32 records; missing intensity saves as 0."""
    n = len(cloud)
    data = np.zeros((n, 4), dtype="<f4")
    data[:, :3] = cloud.positions
    if cloud.intensity is not None:
        data[:, 3] = cloud.intensity
    atomic_write_bytes(path, data.tobytes())


def load_labels(
    path: Union[str, Path],
    num_classes: int,
    class_map: Optional[Dict[int, int]] = None,
    expected_count: Optional[int] = None,
) -> LabelSet:
    """Read a binary label file, remapping raw ids through `class_map`.

    The semantic class is the lower 16 bits of each record. With no map,
    raw ids already in [0, num_classes) pass through and anything else
    becomes -1; with a map, unmapped ids become -1.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % LABEL_RECORD_BYTES != 0:
        raise ScanFormatError(
            f"{path}: {len(raw)} bytes is not a multiple of {LABEL_RECORD_BYTES}"
        )
    records = np.frombuffer(raw, dtype="<u4")
    semantic = (records & 0xFFFF).astype(np.int64)
    if expected_count is not None and semantic.shape[0] != expected_count:
        raise ScanFormatError(
            f"{path}: {semantic.shape[0]} labels for {expected_count} points"
        )
    if class_map is None:
        labels = np.where(
            (semantic >= 0) & (semantic < num_classes), semantic, UNKNOWN_LABEL
        )
    else:
        labels = np.full(semantic.shape, UNKNOWN_LABEL, dtype=np.int64)
        for raw_id, train_id in class_map.items():
            labels[semantic == raw_id] = train_id
    return LabelSet(labels, num_classes)


def save_labels(path: Union[str, Path], labels: LabelSet) -> None:
    """Write labels as uint32 records with zeroed instance bits; -1 maps to 0xFFFF."""
    sem = labels.labels.astype(np.int64)
    sem = np.where(sem == UNKNOWN_LABEL, 0xFFFF, sem)
    atomic_write_bytes(path, sem.astype("<u4").tobytes())


def load_class_map(path: Union[str, Path]) -> Dict[int, int]:
    """Class map file: YAML mapping of raw id -> train id or 'ignore'."""
    with open(path) as fh:
        entries = yaml.safe_load(fh)
    if not isinstance(entries, dict):
        raise ScanFormatError(f"{path}: class map must be a mapping")
    out = {}
    for raw_id, train_id in entries.items():
        if train_id == "ignore":
            out[int(raw_id)] = UNKNOWN_LABEL
        else:
            out[int(raw_id)] = int(train_id)
    return out


def atomic_write_bytes(path: Union[str, Path], payload: bytes) -> None:
    """Write via temp file + rename so interrupted runs never leave partial files."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)

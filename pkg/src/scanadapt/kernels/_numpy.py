"""NumPy implementations of the per-point kernels.

Reference semantics for the compiled extension: `_native` must agree with
these functions exactly for integer outputs and to float round-off for
real outputs (reductions may differ in the last bits because accumulation
order differs).
"""

import numpy as np
from scipy.spatial import cKDTree


def point_ranges(positions):
    """Euclidean distance of each point from the origin. positions: (N,3)."""
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    return np.sqrt(
        positions[:, 0] ** 2 + positions[:, 1] ** 2 + positions[:, 2] ** 2
    )


def pitch_angles(positions):
    """Elevation angle atan2(z, hypot(x, y)) per point, in (-pi/2, pi/2)."""
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    horiz = np.hypot(positions[:, 0], positions[:, 1])
    return np.arctan2(positions[:, 2], horiz)


def softmax_confidence(logits):
    """Per-row argmax label and max softmax probability.

    Ties take the lowest class index. Returns (labels int64, conf float64).
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    if logits.shape[0] == 0:
        return (
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.float64),
        )
    labels = np.argmax(logits, axis=1).astype(np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    conf = 1.0 / np.exp(shifted).sum(axis=1)
    return labels, conf


def decay_weights(d_norm, alpha, raw):
    """Exponential distance decay applied to raw scores: raw * exp(-alpha*d)."""
    d_norm = np.ascontiguousarray(d_norm, dtype=np.float64)
    raw = np.ascontiguousarray(raw, dtype=np.float64)
    return raw * np.exp(-alpha * d_norm)


def bin_indices(ranges, step):
    """1-based distance bin per point: bin u covers [(u-1)*step, u*step)."""
    ranges = np.ascontiguousarray(ranges, dtype=np.float64)
    return np.floor(ranges / step).astype(np.int64) + 1


def apply_clamped_noise(positions, noise, scale, clamp):
    """positions + clip(noise * scale, -clamp, clamp), all shaped (N,3)."""
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    scale = np.ascontiguousarray(scale, dtype=np.float64)
    return positions + np.clip(noise * scale, -clamp, clamp)


def radius_stats(positions, radius, workers=1):
    """Neighbor count and z standard deviation within `radius` of each point.

    Counts include the query point itself; the std uses the population
    convention over all neighbors (incl. self).
    """
    positions = np.ascontiguousarray(positions, dtype=np.float64)
    n = positions.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    tree = cKDTree(positions)
    pairs = tree.query_ball_point(positions, radius, workers=workers)
    counts = np.fromiter((len(p) for p in pairs), dtype=np.int64, count=n)
    flat = np.fromiter(
        (i for p in pairs for i in p), dtype=np.int64, count=int(counts.sum())
    )
    z = positions[:, 2]
    offsets = np.zeros(n, dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    sum_z = np.add.reduceat(z[flat], offsets)
    sum_z2 = np.add.reduceat(z[flat] ** 2, offsets)
    mean = sum_z / counts
    var = np.maximum(sum_z2 / counts - mean * mean, 0.0)
    return counts, np.sqrt(var)

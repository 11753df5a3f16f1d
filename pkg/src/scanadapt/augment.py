"""Prior-guided point cloud augmentation.

Non-learned transforms that push a clean synthetic-style scan toward the
measurement statistics of a real one and vice versa:

* density alignment: range bins of a source/target pair are subsampled
  toward a softened common count, so neither domain sees a density the
  other cannot produce;
* distance jitter (source only): Gaussian displacement whose scale grows
  with sqrt of the normalized range, mimicking range-dependent sensor
  noise;
* height jitter (both domains): small structured noise that leaves z
  untouched near the ground and x/y untouched high up;
* local affine: each pitch region independently rotated about z around
  its centroid and uniformly rescaled;
* global affine: one whole-cloud rotation, per-axis scale and translation.

Stages run in that order and are individually toggleable. Only density
alignment removes points; every other stage preserves the point-to-label
correspondence.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, mixing
from .cloud import LabelSet, PointCloud, normalized_heights, normalized_ranges, ranges


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for every augmentation stage.

    Defaults: 5 m range bins, soft factor half-width 0.1, distance jitter
    std ramping 0.005 -> 0.05 m, height jitter std 0.002 m with the
    protected bands at normalized heights 0.2/0.8, displacement clamp
    0.1 m, local rotation within +-pi/2 and scale within [0.95, 1.05].
    The global transform ranges (yaw within +-pi/4, per-axis scale
    [0.95, 1.05], translation within +-0.2 m) are deliberately mild so
    the cloud stays inside the scene extent.
    """

    bin_step: float = 5.0
    soft_half_width: float = 0.1
    jitter_sigma_min: float = 0.005
    jitter_sigma_max: float = 0.05
    height_sigma: float = 0.002
    height_low: float = 0.2
    height_high: float = 0.8
    jitter_clamp: float = 0.1
    local_rotation: float = math.pi / 2
    local_scale_low: float = 0.95
    local_scale_high: float = 1.05
    local_region_count: int = 4
    global_rotation: float = math.pi / 4
    global_scale_low: float = 0.95
    global_scale_high: float = 1.05
    global_translation: float = 0.2

    def __post_init__(self):
        if self.bin_step <= 0:
            raise ValueError("bin_step must be positive")
        if not 0 < self.soft_half_width < 1:
            raise ValueError("soft_half_width must lie in (0, 1)")
        if not 0 <= self.jitter_sigma_min <= self.jitter_sigma_max:
            raise ValueError("need 0 <= jitter_sigma_min <= jitter_sigma_max")
        if not 0 <= self.height_low < self.height_high <= 1:
            raise ValueError("need 0 <= height_low < height_high <= 1")
        if self.jitter_clamp <= 0 or self.height_sigma < 0:
            raise ValueError("jitter_clamp must be positive, height_sigma nonnegative")
        if not 0 < self.local_scale_low <= self.local_scale_high:
            raise ValueError("bad local scale range")
        if not 0 < self.global_scale_low <= self.global_scale_high:
            raise ValueError("bad global scale range")
        if self.local_region_count < 2:
            raise ValueError("local_region_count must be >= 2")


@dataclass(frozen=True)
class StageToggles:
    density: bool = True
    distance_jitter: bool = True
    height_jitter: bool = True
    local_affine: bool = True
    global_affine: bool = True

    @classmethod
    def none(cls) -> "StageToggles":
        return cls(False, False, False, False, False)


@dataclass(frozen=True)
class BinPartition:
    """1-based range bin per point; bin u covers [(u-1)*step, u*step)."""

    indices: np.ndarray
    count: int

    def __post_init__(self):
        object.__setattr__(
            self, "indices", np.ascontiguousarray(self.indices, dtype=np.int64)
        )

    def members(self, u: int) -> np.ndarray:
        return np.nonzero(self.indices == u)[0]


def bin_by_range(cloud: PointCloud, step: float) -> BinPartition:
    """Partition a cloud into half-open range bins of width `step`.

    The bin count is the highest occupied bin index (a point exactly on a
    bin edge opens the next bin), 0 for an empty cloud.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if len(cloud) == 0:
        return BinPartition(np.empty(0, dtype=np.int64), 0)
    idx = kernels.bin_indices(ranges(cloud), step)
    return BinPartition(idx, int(idx.max()))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class DensitySampleLog:
    """Per-bin audit trail of one density alignment pass."""

    bins: np.ndarray  # 1-based paired bin index
    soft_factor: np.ndarray  # xi drawn for the bin
    goal: np.ndarray  # rounded kept-count target
    original_src: np.ndarray
    original_tgt: np.ndarray
    kept_src: np.ndarray
    kept_tgt: np.ndarray


def density_aware_sample(
    src: PointCloud, tgt: PointCloud, cfg: AugmentConfig, rng: np.random.Generator
):
    """Per-bin soft subsampling toward the smaller of the paired counts.

    For each bin pair up to the shorter partition, a soft factor
    xi ~ U[1-eps, 1+eps] scales min(N_src, N_tgt) into the kept count
    (round half up); any side exceeding it is uniformly subsampled, the
    other is untouched. Bins beyond the pairing and points in them are
    never touched. Returns boolean keep masks (src, tgt) and a
    DensitySampleLog recording the per-bin draws.
    """
    bins_src = bin_by_range(src, cfg.bin_step)
    bins_tgt = bin_by_range(tgt, cfg.bin_step)
    keep_src = np.ones(len(src), dtype=bool)
    keep_tgt = np.ones(len(tgt), dtype=bool)
    eps = cfg.soft_half_width
    paired = min(bins_src.count, bins_tgt.count)
    log = DensitySampleLog(*(np.zeros(paired) for _ in range(7)))
    for u in range(1, paired + 1):
        xi = rng.uniform(1 - eps, 1 + eps)
        idx_s = bins_src.members(u)
        idx_t = bins_tgt.members(u)
        goal = _round_half_up(min(idx_s.size, idx_t.size) * xi)
        for idx, keep in ((idx_s, keep_src), (idx_t, keep_tgt)):
            if idx.size > goal:
                drop = rng.permutation(idx.size)[goal:]
                keep[idx[drop]] = False
        log.bins[u - 1] = u
        log.soft_factor[u - 1] = xi
        log.goal[u - 1] = goal
        log.original_src[u - 1] = idx_s.size
        log.original_tgt[u - 1] = idx_t.size
        log.kept_src[u - 1] = keep_src[idx_s].sum()
        log.kept_tgt[u - 1] = keep_tgt[idx_t].sum()
    return keep_src, keep_tgt, log


def _jitter(cloud: PointCloud, scale: np.ndarray, clamp: float, rng) -> PointCloud:
    noise = rng.standard_normal((len(cloud), 3))
    pos = kernels.apply_clamped_noise(cloud.positions, noise, scale, clamp)
    return PointCloud(pos, None if cloud.intensity is None else cloud.intensity.copy())


def distance_aware_jitter(
    cloud: PointCloud, d_norm: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> PointCloud:
    """Displace each point by isotropic Gaussian noise whose std ramps
    from jitter_sigma_min to jitter_sigma_max with sqrt(d_norm), softened
    by a per-point factor; components clamp at +-jitter_clamp."""
    d_norm = np.ascontiguousarray(d_norm, dtype=np.float64)
    if d_norm.shape[0] != len(cloud):
        raise ValueError("d_norm length mismatch")
    if d_norm.size and (d_norm.min() < 0 or d_norm.max() > 1):
        raise ValueError("d_norm must lie in [0, 1]")
    xi = rng.uniform(1 - cfg.soft_half_width, 1 + cfg.soft_half_width, len(cloud))
    sigma = cfg.jitter_sigma_min + (
        cfg.jitter_sigma_max - cfg.jitter_sigma_min
    ) * np.sqrt(d_norm) * xi
    scale = np.repeat(sigma[:, None], 3, axis=1)
    return _jitter(cloud, scale, cfg.jitter_clamp, rng)


def height_aware_jitter(
    cloud: PointCloud, z_norm: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> PointCloud:
    """Small per-axis Gaussian noise gated by normalized height.

    x/y move only strictly below height_high, z only strictly above
    height_low; gated-off axes are returned bit-identical.
    """
    z_norm = np.ascontiguousarray(z_norm, dtype=np.float64)
    if z_norm.shape[0] != len(cloud):
        raise ValueError("z_norm length mismatch")
    if z_norm.size and (z_norm.min() < 0 or z_norm.max() > 1):
        raise ValueError("z_norm must lie in [0, 1]")
    n = len(cloud)
    xi = rng.uniform(1 - cfg.soft_half_width, 1 + cfg.soft_half_width, n)
    w_xy = z_norm < cfg.height_high
    w_z = z_norm > cfg.height_low
    weights = np.stack([w_xy, w_xy, w_z], axis=1).astype(np.float64)
    scale = cfg.height_sigma * xi[:, None] * weights
    out = _jitter(cloud, scale, cfg.jitter_clamp, rng)
    # restore gated axes exactly (multiplying noise by 0 can still flip
    # the sign bit of a negative zero)
    out.positions[~w_xy, 0:2] = cloud.positions[~w_xy, 0:2]
    out.positions[~w_z, 2] = cloud.positions[~w_z, 2]
    return out


def uniform_jitter(
    cloud: PointCloud, sigma: float, clamp: float, rng: np.random.Generator
) -> PointCloud:
    """Prior-free baseline: one isotropic noise scale for every point."""
    scale = np.full((len(cloud), 3), float(sigma))
    return _jitter(cloud, scale, clamp, rng)


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def local_affine(
    cloud: PointCloud,
    regions: np.ndarray,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    num_regions: int = None,
) -> PointCloud:
    """Rotate each pitch region about z around its own centroid and apply
    a uniform per-region scale, both drawn independently per region.

    Draws happen for every region index in [0, num_regions) whether or
    not it is occupied, so the consumed randomness depends only on the
    region count.
    """
    regions = np.ascontiguousarray(regions, dtype=np.int64)
    if regions.shape[0] != len(cloud):
        raise ValueError("regions length mismatch")
    if num_regions is None:
        num_regions = int(regions.max()) + 1 if regions.size else 0
    pos = cloud.positions.copy()
    for r in range(num_regions):
        angle = rng.uniform(-cfg.local_rotation, cfg.local_rotation)
        scale = rng.uniform(cfg.local_scale_low, cfg.local_scale_high)
        sel = regions == r
        if not sel.any():
            continue
        centroid = pos[sel].mean(axis=0)
        pos[sel] = (pos[sel] - centroid) @ _rot_z(angle).T * scale + centroid
    return PointCloud(pos, None if cloud.intensity is None else cloud.intensity.copy())


def global_affine(
    cloud: PointCloud, cfg: AugmentConfig, rng: np.random.Generator
) -> PointCloud:
    """One whole-cloud transform: yaw about the origin, then per-axis
    scale, then translation."""
    angle = rng.uniform(-cfg.global_rotation, cfg.global_rotation)
    scale = rng.uniform(cfg.global_scale_low, cfg.global_scale_high, 3)
    shift = rng.uniform(-cfg.global_translation, cfg.global_translation, 3)
    pos = cloud.positions @ _rot_z(angle).T * scale + shift
    return PointCloud(pos, None if cloud.intensity is None else cloud.intensity.copy())


def run_pipeline(
    src_cloud: PointCloud,
    src_labels: LabelSet,
    tgt_cloud: PointCloud,
    tgt_labels: LabelSet,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    stages: StageToggles = StageToggles(),
    region_count: int = None,
):
    """Full augmentation of one source/target pair in the fixed stage
    order density -> distance jitter (source) -> height jitter (both) ->
    local affine (both) -> global affine (both).

    `region_count` overrides cfg.local_region_count so the caller can
    reuse the region draw it made for mixing. Returns the augmented
    (src_cloud, src_labels, tgt_cloud, tgt_labels).
    """
    if region_count is None:
        region_count = cfg.local_region_count
    if stages.density:
        keep_src, keep_tgt, _ = density_aware_sample(src_cloud, tgt_cloud, cfg, rng)
        src_cloud = src_cloud.select(keep_src)
        src_labels = src_labels.select(keep_src)
        tgt_cloud = tgt_cloud.select(keep_tgt)
        tgt_labels = tgt_labels.select(keep_tgt)
    if stages.distance_jitter and len(src_cloud):
        src_cloud = distance_aware_jitter(
            src_cloud, normalized_ranges(src_cloud), cfg, rng
        )
    if stages.height_jitter:
        if len(src_cloud):
            src_cloud = height_aware_jitter(
                src_cloud, normalized_heights(src_cloud), cfg, rng
            )
        if len(tgt_cloud):
            tgt_cloud = height_aware_jitter(
                tgt_cloud, normalized_heights(tgt_cloud), cfg, rng
            )
    if stages.local_affine:
        for which in ("src", "tgt"):
            cloud = src_cloud if which == "src" else tgt_cloud
            if len(cloud) == 0:
                continue
            part = mixing.partition(cloud, region_count)
            moved = local_affine(cloud, part.region, cfg, rng, region_count)
            if which == "src":
                src_cloud = moved
            else:
                tgt_cloud = moved
    if stages.global_affine:
        if len(src_cloud):
            src_cloud = global_affine(src_cloud, cfg, rng)
        if len(tgt_cloud):
            tgt_cloud = global_affine(tgt_cloud, cfg, rng)
    return src_cloud, src_labels, tgt_cloud, tgt_labels

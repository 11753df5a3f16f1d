"""Synthetic two-domain scene generator.

Produces labeled desk-scale scans from geometric primitives. Source-like
scenes are clean and dense everywhere; target-like scenes add per-point
Gaussian noise that grows with range, thin out with range, and carry a
reflectance calibration offset, so the synthetic-to-real shift (noise +
sparsity + sensor calibration) exists by construction.
"""

from dataclasses import dataclass

import numpy as np

from .cloud import LabelSet, PointCloud
from .rng import RandomStream

CLASS_NAMES = ("ground", "building", "pole", "vehicle", "vegetation", "fence")
NUM_CLASSES = len(CLASS_NAMES)

GROUND, BUILDING, POLE, VEHICLE, VEGETATION, FENCE = range(NUM_CLASSES)

# Mean reflectance and spread per class; overlapping on purpose so the
# classifier cannot rely on intensity alone.
_INTENSITY = {
    GROUND: (0.22, 0.10),
    BUILDING: (0.46, 0.11),
    POLE: (0.64, 0.10),
    VEHICLE: (0.74, 0.10),
    VEGETATION: (0.38, 0.11),
    FENCE: (0.56, 0.11),
}

# Unnormalized point-budget weight per primitive kind.
_KIND_WEIGHT = {
    GROUND: 60.0,
    BUILDING: 18.0,
    POLE: 2.5,
    VEHICLE: 10.0,
    VEGETATION: 8.0,
    FENCE: 6.0,
}


@dataclass
class SceneSpec:
    """Recipe for one synthetic scan."""

    kind: str  # "source" or "target"
    extent: float = 40.0
    beams: int = 48
    ground_planes: int = 1
    buildings: int = 3
    poles: int = 2
    vehicles: int = 4
    vegetation: int = 3
    fences: int = 2
    base_noise: float = 0.0  # per-point noise scale at full range, meters
    density_decay: float = 0.02  # per-meter decay of point density
    intensity_shift: float = 0.0  # reflectance calibration offset of the sensor
    target_points: int = 5000
    sensor_height: float = 1.7

    def __post_init__(self):
        if self.kind not in ("source", "target"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.extent <= 0 or self.beams <= 0:
            raise ValueError("extent and beam count must be positive")
        if self.base_noise < 0 or self.density_decay < 0:
            raise ValueError("noise and decay must be nonnegative")
        if not -1.0 <= self.intensity_shift <= 1.0:
            raise ValueError("intensity_shift must lie in [-1, 1]")
        if self.kind == "source" and self.base_noise != 0:
            raise ValueError("source-like scenes are clean (base_noise must be 0)")
        if self.kind == "target" and not (self.base_noise > 0 and self.density_decay > 0):
            raise ValueError("target-like scenes need base_noise > 0 and density_decay > 0")
        for name in ("ground_planes", "buildings", "poles", "vehicles", "vegetation", "fences"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def default_source_spec(**overrides) -> SceneSpec:
    kw = {"base_noise": 0.0, "density_decay": 0.02}
    kw.update(overrides)
    return SceneSpec(kind="source", **kw)


def default_target_spec(**overrides) -> SceneSpec:
    kw = {"base_noise": 0.05, "density_decay": 0.12, "intensity_shift": 0.06}
    kw.update(overrides)
    return SceneSpec(kind="target", **kw)


def generate_scene(
    spec: SceneSpec, stream: RandomStream, *keys: int
) -> tuple[PointCloud, LabelSet]:
    """Deterministically build one labeled scan from a spec and a stream.

    Extra keys (domain id, scan index) pick independent substreams so a
    batch of scenes can be generated in any order or in parallel.
    """
    g = stream.generator(*keys)
    ground_z = -spec.sensor_height

    primitives = []  # (class id, weight, sampler)
    if spec.ground_planes > 0:
        primitives.append(
            (GROUND, _KIND_WEIGHT[GROUND] * spec.ground_planes, _GroundRings(spec))
        )
    for _ in range(spec.buildings):
        primitives.append(_make_building(g, spec, ground_z))
    for _ in range(spec.poles):
        primitives.append(_make_pole(g, spec, ground_z))
    for _ in range(spec.vehicles):
        primitives.append(_make_vehicle(g, spec, ground_z))
    for _ in range(spec.vegetation):
        primitives.append(_make_vegetation(g, spec, ground_z))
    for _ in range(spec.fences):
        primitives.append(_make_fence(g, spec, ground_z))

    if not primitives:
        return (
            PointCloud(np.empty((0, 3)), np.empty(0)),
            LabelSet(np.empty(0, dtype=np.int64), NUM_CLASSES),
        )

    total_weight = sum(w for _, w, _ in primitives)
    chunks = []
    labels = []
    for class_id, weight, sampler in primitives:
        n = int(np.floor(weight / total_weight * spec.target_points + 0.5))
        pts = sampler(g, n)
        chunks.append(pts)
        labels.append(np.full(pts.shape[0], class_id, dtype=np.int64))

    positions = np.concatenate(chunks, axis=0)
    label_arr = np.concatenate(labels)

    if spec.base_noise > 0 and positions.shape[0] > 0:
        r = np.sqrt((positions**2).sum(axis=1))
        sigma = spec.base_noise * (0.2 + 0.8 * np.clip(r / spec.extent, 0.0, 1.0))
        positions = positions + g.standard_normal(positions.shape) * sigma[:, None]

    intensity = np.empty(positions.shape[0])
    for class_id in range(NUM_CLASSES):
        mask = label_arr == class_id
        if mask.any():
            mean, sd = _INTENSITY[class_id]
            intensity[mask] = np.clip(
                mean + spec.intensity_shift + sd * g.standard_normal(mask.sum()), 0.0, 1.0
            )

    return PointCloud(positions, intensity), LabelSet(label_arr, NUM_CLASSES)


class _GroundRings:
    """Ground plane sampled along concentric beam rings.

    Ring radii follow sensor_height / tan(pitch) for evenly spaced pitch
    angles; per-ring counts follow circumference times the density decay,
    thinning the far field for target-like scenes.
    """

    def __init__(self, spec: SceneSpec):
        self.spec = spec

    def __call__(self, g: np.random.Generator, n: int) -> np.ndarray:
        spec = self.spec
        if n <= 0:
            return np.empty((0, 3))
        pitch_near = np.deg2rad(25.0)
        pitch_far = np.arctan2(spec.sensor_height, spec.extent)
        pitches = np.linspace(pitch_near, pitch_far, spec.beams)
        radii = np.minimum(spec.sensor_height / np.tan(pitches), spec.extent)
        weight = radii * np.exp(-spec.density_decay * radii)
        weight = weight / weight.sum()
        counts = np.floor(weight * n + 0.5).astype(np.int64)
        out = []
        for radius, count in zip(radii, counts):
            if count <= 0:
                continue
            azimuth = g.uniform(0.0, 2.0 * np.pi, count)
            ring = np.column_stack(
                (
                    radius * np.cos(azimuth),
                    radius * np.sin(azimuth),
                    np.full(count, -spec.sensor_height),
                )
            )
            out.append(ring)
        if not out:
            return np.empty((0, 3))
        return np.concatenate(out, axis=0)


def _range_weight(spec: SceneSpec, r: float) -> float:
    return float(np.exp(-spec.density_decay * r))


def _place(g: np.random.Generator, spec: SceneSpec, r_lo: float, r_hi: float):
    r = g.uniform(r_lo, min(r_hi, spec.extent * 0.92))
    azimuth = g.uniform(0.0, 2.0 * np.pi)
    return r, np.array([r * np.cos(azimuth), r * np.sin(azimuth)])


def _make_building(g, spec, ground_z):
    r, center = _place(g, spec, 12.0, spec.extent * 0.9)
    size = np.array([g.uniform(8.0, 16.0), g.uniform(8.0, 16.0), g.uniform(5.0, 10.0)])
    yaw = g.uniform(0.0, 2.0 * np.pi)
    weight = _KIND_WEIGHT[BUILDING] * _range_weight(spec, r)
    return BUILDING, weight, _BoxSurface(center, ground_z, size, yaw, roof=True)


def _make_pole(g, spec, ground_z):
    r, center = _place(g, spec, 5.0, spec.extent * 0.9)
    height = g.uniform(3.5, 6.0)
    weight = _KIND_WEIGHT[POLE] * _range_weight(spec, r)
    return POLE, weight, _Cylinder(center, ground_z, 0.12, height)


def _make_vehicle(g, spec, ground_z):
    r, center = _place(g, spec, 6.0, spec.extent * 0.85)
    size = np.array([4.2, 1.8, 1.5])
    yaw = g.uniform(0.0, 2.0 * np.pi)
    weight = _KIND_WEIGHT[VEHICLE] * _range_weight(spec, r)
    return VEHICLE, weight, _BoxSurface(center, ground_z, size, yaw, roof=True)


def _make_vegetation(g, spec, ground_z):
    r, center = _place(g, spec, 8.0, spec.extent * 0.9)
    radii = g.uniform(1.0, 2.5, size=3)
    center_z = ground_z + g.uniform(1.5, 3.0)
    weight = _KIND_WEIGHT[VEGETATION] * _range_weight(spec, r)
    return VEGETATION, weight, _Blob(center, center_z, radii)


def _make_fence(g, spec, ground_z):
    r, center = _place(g, spec, 6.0, spec.extent * 0.9)
    size = np.array([g.uniform(6.0, 14.0), 0.08, 1.2])
    yaw = g.uniform(0.0, 2.0 * np.pi)
    weight = _KIND_WEIGHT[FENCE] * _range_weight(spec, r)
    return FENCE, weight, _BoxSurface(center, ground_z, size, yaw, roof=False)


class _BoxSurface:
    """Points on the vertical faces (and optionally the roof) of a box."""

    def __init__(self, center_xy, ground_z, size, yaw, roof):
        self.center_xy = center_xy
        self.ground_z = ground_z
        self.size = size
        self.yaw = yaw
        self.roof = roof

    def __call__(self, g: np.random.Generator, n: int) -> np.ndarray:
        if n <= 0:
            return np.empty((0, 3))
        lx, ly, lz = self.size
        areas = [lx * lz, lx * lz, ly * lz, ly * lz]
        if self.roof:
            areas.append(lx * ly)
        areas = np.asarray(areas, dtype=np.float64)
        face = g.choice(len(areas), size=n, p=areas / areas.sum())
        u = g.uniform(-0.5, 0.5, n)
        v = g.uniform(0.0, 1.0, n)
        local = np.empty((n, 3))
        for idx in range(len(areas)):
            m = face == idx
            if not m.any():
                continue
            if idx == 0:  # y = -ly/2 wall
                local[m] = np.column_stack((u[m] * lx, np.full(m.sum(), -ly / 2), v[m] * lz))
            elif idx == 1:  # y = +ly/2 wall
                local[m] = np.column_stack((u[m] * lx, np.full(m.sum(), ly / 2), v[m] * lz))
            elif idx == 2:  # x = -lx/2 wall
                local[m] = np.column_stack((np.full(m.sum(), -lx / 2), u[m] * ly, v[m] * lz))
            elif idx == 3:  # x = +lx/2 wall
                local[m] = np.column_stack((np.full(m.sum(), lx / 2), u[m] * ly, v[m] * lz))
            else:  # roof
                local[m] = np.column_stack((u[m] * lx, (v[m] - 0.5) * ly, np.full(m.sum(), lz)))
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        x = c * local[:, 0] - s * local[:, 1] + self.center_xy[0]
        y = s * local[:, 0] + c * local[:, 1] + self.center_xy[1]
        z = local[:, 2] + self.ground_z
        return np.column_stack((x, y, z))


class _Cylinder:
    def __init__(self, center_xy, ground_z, radius, height):
        self.center_xy = center_xy
        self.ground_z = ground_z
        self.radius = radius
        self.height = height

    def __call__(self, g: np.random.Generator, n: int) -> np.ndarray:
        if n <= 0:
            return np.empty((0, 3))
        azimuth = g.uniform(0.0, 2.0 * np.pi, n)
        z = g.uniform(0.0, self.height, n)
        return np.column_stack(
            (
                self.center_xy[0] + self.radius * np.cos(azimuth),
                self.center_xy[1] + self.radius * np.sin(azimuth),
                self.ground_z + z,
            )
        )


class _Blob:
    def __init__(self, center_xy, center_z, radii):
        self.center = np.array([center_xy[0], center_xy[1], center_z])
        self.radii = radii

    def __call__(self, g: np.random.Generator, n: int) -> np.ndarray:
        if n <= 0:
            return np.empty((0, 3))
        return self.center + g.standard_normal((n, 3)) * self.radii * 0.5

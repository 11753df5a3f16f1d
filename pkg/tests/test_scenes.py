import numpy as np
import pytest

from scanadapt.rng import STREAM_SCENE, RandomStream
from scanadapt.scenes import (
    NUM_CLASSES,
    SceneSpec,
    default_source_spec,
    default_target_spec,
    generate_scene,
)


@pytest.fixture
def stream():
    return RandomStream(11, STREAM_SCENE)


class TestSceneSpec:
    def test_source_must_be_clean(self):
        with pytest.raises(ValueError):
            SceneSpec(kind="source", base_noise=0.01)

    def test_target_needs_noise_and_decay(self):
        with pytest.raises(ValueError):
            SceneSpec(kind="target", base_noise=0.0, density_decay=0.05)
        with pytest.raises(ValueError):
            SceneSpec(kind="target", base_noise=0.05, density_decay=0.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SceneSpec(kind="validation")

    def test_override_factories(self):
        spec = default_target_spec(base_noise=0.1, target_points=100)
        assert spec.base_noise == 0.1 and spec.target_points == 100
        assert default_source_spec().base_noise == 0.0


class TestGenerateScene:
    def test_deterministic_per_key(self, stream):
        spec = default_source_spec(target_points=600)
        c1, l1 = generate_scene(spec, stream, 0, 4)
        c2, l2 = generate_scene(spec, stream, 0, 4)
        np.testing.assert_array_equal(c1.positions, c2.positions)
        np.testing.assert_array_equal(l1.labels, l2.labels)

    def test_keys_make_distinct_scans(self, stream):
        spec = default_source_spec(target_points=600)
        c1, _ = generate_scene(spec, stream, 0, 0)
        c2, _ = generate_scene(spec, stream, 0, 1)
        assert c1.positions.shape != c2.positions.shape or not np.array_equal(
            c1.positions, c2.positions
        )

    def test_point_budget_roughly_met(self, stream):
        spec = default_target_spec(target_points=2000)
        cloud, labels = generate_scene(spec, stream, 1, 0)
        assert len(cloud) == pytest.approx(2000, rel=0.1)
        assert len(cloud) == len(labels)

    def test_all_classes_present(self, stream):
        spec = default_source_spec(target_points=4000)
        _, labels = generate_scene(spec, stream, 0, 2)
        assert set(np.unique(labels.labels)) == set(range(NUM_CLASSES))

    def test_intensity_in_unit_interval(self, stream):
        cloud, _ = generate_scene(default_source_spec(target_points=1000), stream, 0, 3)
        assert cloud.intensity.min() >= 0.0 and cloud.intensity.max() <= 1.0

    def test_target_is_noisier_than_source(self, stream):
        # same geometry seed, the noisy variant should not match the clean one
        src = default_source_spec(target_points=1500)
        tgt = default_target_spec(target_points=1500)
        c_src, _ = generate_scene(src, stream, 0, 5)
        c_tgt, _ = generate_scene(tgt, stream, 0, 5)
        assert not np.array_equal(
            c_src.positions[: min(len(c_src), len(c_tgt))],
            c_tgt.positions[: min(len(c_src), len(c_tgt))],
        )

    def test_empty_spec_yields_empty_scene(self, stream):
        spec = SceneSpec(
            kind="source", ground_planes=0, buildings=0, poles=0, vehicles=0,
            vegetation=0, fences=0,
        )
        cloud, labels = generate_scene(spec, stream, 0, 0)
        assert len(cloud) == 0 and len(labels) == 0

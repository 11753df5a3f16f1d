"""Augmentation stages: binning, density alignment, jitters, affines."""

import numpy as np
import pytest

from scanadapt.augment import (
    AugmentConfig,
    StageToggles,
    bin_by_range,
    density_aware_sample,
    distance_aware_jitter,
    global_affine,
    height_aware_jitter,
    local_affine,
    run_pipeline,
    uniform_jitter,
)
from scanadapt.cloud import LabelSet, PointCloud, normalized_heights
from tests.conftest import random_cloud


def line_cloud(rs):
    """Points along +x at the given ranges."""
    rs = np.asarray(rs, dtype=np.float64)
    return PointCloud(np.column_stack((rs, np.zeros_like(rs), np.zeros_like(rs))))


class TestAugmentConfig:
    def test_defaults_valid(self):
        AugmentConfig()

    @pytest.mark.parametrize(
        "kw",
        [
            {"bin_step": 0.0},
            {"soft_half_width": 0.0},
            {"soft_half_width": 1.0},
            {"jitter_sigma_min": 0.06},  # above max
            {"height_low": 0.9},  # above high
            {"jitter_clamp": 0.0},
            {"local_scale_low": 0.0},
            {"local_region_count": 1},
        ],
    )
    def test_bad_values_rejected(self, kw):
        with pytest.raises(ValueError):
            AugmentConfig(**kw)


class TestBinByRange:
    def test_half_open_bins(self):
        cloud = line_cloud([0.5, 4.9, 5.0, 12.0])
        part = bin_by_range(cloud, 5.0)
        np.testing.assert_array_equal(part.indices, [1, 1, 2, 3])
        assert part.count == 3

    def test_edge_point_opens_next_bin(self):
        part = bin_by_range(line_cloud([10.0]), 5.0)
        np.testing.assert_array_equal(part.indices, [3])

    def test_empty_cloud(self):
        part = bin_by_range(PointCloud(np.empty((0, 3))), 5.0)
        assert part.count == 0 and len(part.indices) == 0

    def test_members(self):
        part = bin_by_range(line_cloud([1.0, 7.0, 2.0]), 5.0)
        np.testing.assert_array_equal(part.members(1), [0, 2])
        np.testing.assert_array_equal(part.members(2), [1])


class TestDensityAlignment:
    def test_kept_counts_follow_soft_goal(self, rng):
        src = line_cloud(rng.uniform(0.0, 30.0, 400))
        tgt = line_cloud(rng.uniform(0.0, 30.0, 250))
        cfg = AugmentConfig()
        keep_src, keep_tgt, log = density_aware_sample(src, tgt, cfg, rng)
        for i in range(len(log.bins)):
            goal = int(log.goal[i])
            assert goal == int(np.floor(min(log.original_src[i], log.original_tgt[i])
                                        * log.soft_factor[i] + 0.5))
            assert log.kept_src[i] == min(goal, log.original_src[i])
            assert log.kept_tgt[i] == min(goal, log.original_tgt[i])
            assert 0.9 <= log.soft_factor[i] <= 1.1

    def test_removal_only(self, rng):
        src = line_cloud(rng.uniform(0.0, 20.0, 300))
        tgt = line_cloud(rng.uniform(0.0, 20.0, 300))
        keep_src, keep_tgt, _ = density_aware_sample(src, tgt, AugmentConfig(), rng)
        assert keep_src.dtype == bool and keep_tgt.dtype == bool
        assert keep_src.sum() <= len(src) and keep_tgt.sum() <= len(tgt)

    def test_unpaired_bins_untouched(self, rng):
        # target only reaches bin 1; source bin 2+ must be left alone
        src = line_cloud(np.concatenate([np.full(50, 2.0), np.full(80, 12.0)]))
        tgt = line_cloud(np.full(10, 3.0))
        keep_src, keep_tgt, log = density_aware_sample(src, tgt, AugmentConfig(), rng)
        assert keep_src[50:].all()
        assert len(log.bins) == 1

    def test_balanced_bin_can_grow_goal_but_not_points(self, rng):
        # with equal counts, xi > 1 sets a goal above the population;
        # nothing can be added so both sides stay complete
        src = line_cloud(np.full(100, 1.0))
        tgt = line_cloud(np.full(100, 1.5))
        for _ in range(20):
            keep_src, keep_tgt, log = density_aware_sample(
                src, tgt, AugmentConfig(), rng
            )
            if log.soft_factor[0] > 1.0:
                assert keep_src.all() and keep_tgt.all()
                return
        pytest.fail("no draw above 1 in 20 tries")


class TestDistanceJitter:
    def test_displacement_within_clamp(self, rng):
        cloud = random_cloud(rng, 500)
        d = np.linalg.norm(cloud.positions, axis=1) / 80.0
        cfg = AugmentConfig()
        out = distance_aware_jitter(cloud, d, cfg, rng)
        delta = out.positions - cloud.positions
        assert (np.abs(delta) <= cfg.jitter_clamp + 1e-12).all()

    def test_zero_distance_uses_minimum_sigma(self, rng):
        cloud = line_cloud(np.zeros(2000) + 1e-9)
        out = distance_aware_jitter(cloud, np.zeros(2000), AugmentConfig(), rng)
        delta = out.positions - cloud.positions
        assert delta.std() == pytest.approx(0.005, rel=0.1)

    def test_far_points_move_more(self, rng):
        n = 4000
        cloud = PointCloud(np.zeros((2 * n, 3)))
        d = np.concatenate([np.zeros(n), np.ones(n)])
        out = distance_aware_jitter(cloud, d, AugmentConfig(), rng)
        delta = np.abs(out.positions - cloud.positions)
        assert delta[n:].mean() > 3 * delta[:n].mean()

    def test_domain_check(self, rng):
        cloud = line_cloud([1.0])
        with pytest.raises(ValueError):
            distance_aware_jitter(cloud, np.array([1.5]), AugmentConfig(), rng)

    def test_labels_not_needed(self, rng):
        # stage operates purely on geometry
        cloud = random_cloud(rng, 10, with_intensity=False)
        out = distance_aware_jitter(cloud, np.zeros(10), AugmentConfig(), rng)
        assert out.intensity is None


class TestHeightJitter:
    def test_gated_axes_bit_identical(self, rng):
        n = 3000
        cloud = random_cloud(rng, n)
        z = normalized_heights(cloud)
        cfg = AugmentConfig()
        out = height_aware_jitter(cloud, z, cfg, rng)
        high = z >= cfg.height_high  # xy frozen
        low = z <= cfg.height_low  # z frozen
        assert high.any() and low.any()
        assert (
            out.positions[high, 0:2].tobytes() == cloud.positions[high, 0:2].tobytes()
        )
        assert out.positions[low, 2].tobytes() == cloud.positions[low, 2].tobytes()

    def test_strict_inequality_at_thresholds(self, rng):
        cfg = AugmentConfig()
        pos = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
        cloud = PointCloud(pos)
        z = np.array([cfg.height_low, cfg.height_high])
        out = height_aware_jitter(cloud, z, cfg, rng)
        assert out.positions[0, 2] == pos[0, 2]  # z == low: z frozen
        assert tuple(out.positions[1, 0:2]) == tuple(pos[1, 0:2])  # z == high: xy frozen
        assert not np.array_equal(out.positions[0, 0:2], pos[0, 0:2])
        assert out.positions[1, 2] != pos[1, 2]

    def test_mid_band_moves_all_axes(self, rng):
        cloud = PointCloud(np.ones((200, 3)))
        out = height_aware_jitter(cloud, np.full(200, 0.5), AugmentConfig(), rng)
        assert (out.positions != cloud.positions).all()


class TestUniformJitter:
    def test_isotropic_scale(self, rng):
        cloud = PointCloud(np.zeros((20000, 3)))
        out = uniform_jitter(cloud, 0.01, 0.1, rng)
        assert out.positions.std() == pytest.approx(0.01, rel=0.05)

    def test_clamped(self, rng):
        cloud = PointCloud(np.zeros((1000, 3)))
        out = uniform_jitter(cloud, 1.0, 0.1, rng)
        assert np.abs(out.positions).max() <= 0.1 + 1e-12


class TestLocalAffine:
    def test_rigid_within_region_up_to_scale(self, rng):
        cloud = random_cloud(rng, 400)
        regions = rng.integers(0, 3, 400)
        out = local_affine(cloud, regions, AugmentConfig(), rng, 3)
        for r in range(3):
            sel = regions == r
            a = cloud.positions[sel]
            b = out.positions[sel]
            da = np.linalg.norm(a - a.mean(axis=0), axis=1)
            db = np.linalg.norm(b - b.mean(axis=0), axis=1)
            ratio = db[da > 1e-9] / da[da > 1e-9]
            # one uniform scale per region
            assert ratio.std() < 1e-9
            assert 0.95 - 1e-9 <= ratio.mean() <= 1.05 + 1e-9

    def test_centroid_fixed(self, rng):
        cloud = random_cloud(rng, 500)
        regions = np.zeros(500, dtype=np.int64)
        out = local_affine(cloud, regions, AugmentConfig(), rng, 1)
        np.testing.assert_allclose(
            out.positions.mean(axis=0), cloud.positions.mean(axis=0), atol=1e-9
        )

    def test_empty_regions_still_consume_draws(self, rng):
        cloud = random_cloud(rng, 100)
        regions = np.full(100, 2, dtype=np.int64)  # only region 2 occupied
        seed = 99
        a = local_affine(cloud, regions, AugmentConfig(), np.random.default_rng(seed), 4)
        # replay by hand: regions 0 and 1 burn two draws each
        g = np.random.default_rng(seed)
        cfg = AugmentConfig()
        for _ in range(2):
            g.uniform(-cfg.local_rotation, cfg.local_rotation)
            g.uniform(cfg.local_scale_low, cfg.local_scale_high)
        b = local_affine(cloud, np.zeros(100, dtype=np.int64), cfg, g, 1)
        np.testing.assert_allclose(a.positions, b.positions, atol=1e-12)

    def test_z_rotation_preserves_heights_at_unit_scale(self, rng):
        cfg = AugmentConfig(local_scale_low=1.0, local_scale_high=1.0)
        cloud = random_cloud(rng, 200)
        out = local_affine(cloud, np.zeros(200, dtype=np.int64), cfg, rng, 1)
        np.testing.assert_allclose(out.positions[:, 2], cloud.positions[:, 2], atol=1e-12)


class TestGlobalAffine:
    def test_matches_manual_replay(self, rng):
        cloud = random_cloud(rng, 300)
        cfg = AugmentConfig()
        seed = 4242
        out = global_affine(cloud, cfg, np.random.default_rng(seed))
        g = np.random.default_rng(seed)
        angle = g.uniform(-cfg.global_rotation, cfg.global_rotation)
        scale = g.uniform(cfg.global_scale_low, cfg.global_scale_high, 3)
        shift = g.uniform(-cfg.global_translation, cfg.global_translation, 3)
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        expect = cloud.positions @ rot.T * scale + shift
        np.testing.assert_allclose(out.positions, expect, atol=1e-12)

    def test_bounded_motion(self, rng):
        cloud = random_cloud(rng, 200, max_r=10.0)
        cfg = AugmentConfig()
        out = global_affine(cloud, cfg, rng)
        # |x'| <= 1.05 |x| + 0.2 sqrt(3)
        lhs = np.linalg.norm(out.positions, axis=1)
        rhs = 1.05 * np.linalg.norm(cloud.positions, axis=1) + 0.2 * np.sqrt(3)
        assert (lhs <= rhs + 1e-9).all()


class TestRunPipeline:
    def _pair(self, rng):
        src = random_cloud(rng, 600)
        tgt = random_cloud(rng, 500)
        return (
            src,
            LabelSet(rng.integers(0, 6, 600), 6),
            tgt,
            LabelSet(rng.integers(0, 6, 500), 6),
        )

    def test_all_stages_off_is_identity(self, rng):
        src, sl, tgt, tl = self._pair(rng)
        out = run_pipeline(src, sl, tgt, tl, AugmentConfig(), rng, StageToggles.none())
        assert out[0] is src and out[1] is sl and out[2] is tgt and out[3] is tl

    def test_labels_follow_density_selection(self, rng):
        src, sl, tgt, tl = self._pair(rng)
        stages = StageToggles(True, False, False, False, False)
        out_src, out_sl, out_tgt, out_tl = run_pipeline(
            src, sl, tgt, tl, AugmentConfig(), rng, stages
        )
        assert len(out_src) == len(out_sl)
        assert len(out_tgt) == len(out_tl)
        assert len(out_src) <= len(src)

    def test_geometry_stages_keep_point_count(self, rng):
        src, sl, tgt, tl = self._pair(rng)
        stages = StageToggles(False, True, True, True, True)
        out = run_pipeline(src, sl, tgt, tl, AugmentConfig(), rng, stages)
        assert len(out[0]) == len(src) and len(out[2]) == len(tgt)
        assert out[1] is sl and out[3] is tl

    def test_distance_jitter_only_touches_source(self, rng):
        src, sl, tgt, tl = self._pair(rng)
        stages = StageToggles(False, True, False, False, False)
        out = run_pipeline(src, sl, tgt, tl, AugmentConfig(), rng, stages)
        assert not np.array_equal(out[0].positions, src.positions)
        np.testing.assert_array_equal(out[2].positions, tgt.positions)

    def test_deterministic_given_generator(self, rng):
        src, sl, tgt, tl = self._pair(rng)
        a = run_pipeline(src, sl, tgt, tl, AugmentConfig(), np.random.default_rng(5))
        b = run_pipeline(src, sl, tgt, tl, AugmentConfig(), np.random.default_rng(5))
        np.testing.assert_array_equal(a[0].positions, b[0].positions)
        np.testing.assert_array_equal(a[2].positions, b[2].positions)

    def test_stage_order_matches_manual_chain(self, rng):
        # pipeline == density, then src distance jitter, then height jitter,
        # then per-region affine, then global affine, drawn in that order
        from scanadapt import mixing
        from scanadapt.cloud import normalized_ranges

        src, sl, tgt, tl = self._pair(rng)
        cfg = AugmentConfig()
        seed = 77
        got = run_pipeline(src, sl, tgt, tl, cfg, np.random.default_rng(seed))

        g = np.random.default_rng(seed)
        keep_src, keep_tgt, _ = density_aware_sample(src, tgt, cfg, g)
        m_src, m_sl = src.select(keep_src), sl.select(keep_src)
        m_tgt, m_tl = tgt.select(keep_tgt), tl.select(keep_tgt)
        m_src = distance_aware_jitter(m_src, normalized_ranges(m_src), cfg, g)
        m_src = height_aware_jitter(m_src, normalized_heights(m_src), cfg, g)
        m_tgt = height_aware_jitter(m_tgt, normalized_heights(m_tgt), cfg, g)
        for which in ("src", "tgt"):
            cloud = m_src if which == "src" else m_tgt
            part = mixing.partition(cloud, cfg.local_region_count)
            moved = local_affine(cloud, part.region, cfg, g, cfg.local_region_count)
            if which == "src":
                m_src = moved
            else:
                m_tgt = moved
        m_src = global_affine(m_src, cfg, g)
        m_tgt = global_affine(m_tgt, cfg, g)

        np.testing.assert_array_equal(got[0].positions, m_src.positions)
        np.testing.assert_array_equal(got[2].positions, m_tgt.positions)
        np.testing.assert_array_equal(got[1].labels, m_sl.labels)
        np.testing.assert_array_equal(got[3].labels, m_tl.labels)

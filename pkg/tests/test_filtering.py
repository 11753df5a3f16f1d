"""Pseudo-label filtering: weighting, rejection, thresholds, EMA tracking."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scanadapt.filtering import (
    BatchStats,
    ConfidenceSet,
    ThresholdState,
    apply_distance_weights,
    batch_stats,
    distance_weight,
    ema_update,
    filter_labels,
    fixed_threshold_filter,
    infer_pseudo_labels,
    reject_bottom_percentile,
    retained_fractions,
)


def make_conf(raw, labels, num_classes=3, weighted=None):
    raw = np.asarray(raw, dtype=np.float64)
    weighted = raw if weighted is None else np.asarray(weighted, dtype=np.float64)
    return ConfidenceSet(raw, weighted, np.asarray(labels), num_classes)


class TestInferPseudoLabels:
    def test_argmax_and_confidence(self):
        logits = np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 3.0]])
        conf = infer_pseudo_labels(logits, 3)
        np.testing.assert_array_equal(conf.pseudo_labels, [0, 2])
        ex = np.exp(logits - logits.max(axis=1, keepdims=True))
        np.testing.assert_allclose(conf.raw, (ex / ex.sum(axis=1, keepdims=True)).max(axis=1))
        np.testing.assert_array_equal(conf.raw, conf.weighted)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            infer_pseudo_labels(np.zeros((4, 5)), 3)

    def test_non_finite_rejected(self):
        bad = np.array([[1.0, np.nan]])
        with pytest.raises(ValueError):
            infer_pseudo_labels(bad, 2)


class TestDistanceWeighting:
    def test_reference_point(self):
        # e^{-0.5} at full normalized range with the default decay rate
        assert distance_weight(1.0, 0.5) == pytest.approx(0.606531, abs=1e-6)

    def test_monotone_decreasing(self):
        d = np.linspace(0.0, 1.0, 101)
        w = distance_weight(d, 0.5)
        assert (np.diff(w) < 0).all()

    def test_apply_weights(self):
        conf = make_conf([0.8, 0.6], [0, 1])
        got = apply_distance_weights(conf, np.array([0.0, 1.0]), 0.5)
        assert got.weighted[0] == pytest.approx(0.8)
        assert got.weighted[1] == pytest.approx(0.6 * np.exp(-0.5))
        np.testing.assert_array_equal(got.raw, conf.raw)  # raw untouched

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            distance_weight(0.5, -0.1)


class TestBottomRejection:
    def test_floor_count(self):
        conf = make_conf(np.linspace(0.01, 1.0, 250), np.zeros(250, dtype=int))
        mask = reject_bottom_percentile(conf, 0.01)
        assert mask.sum() == 2  # floor(0.01 * 250)
        assert mask[:2].all()

    def test_below_one_point_rejects_none(self):
        conf = make_conf(np.linspace(0.1, 1.0, 50), np.zeros(50, dtype=int))
        assert reject_bottom_percentile(conf, 0.01).sum() == 0

    def test_ties_drop_lower_index(self):
        conf = make_conf([0.5, 0.5, 0.5, 0.9], [0, 0, 0, 0])
        mask = reject_bottom_percentile(conf, 0.25)
        np.testing.assert_array_equal(mask, [True, False, False, False])

    def test_uses_weighted_not_raw(self):
        conf = make_conf([0.9, 0.1], [0, 0], weighted=[0.1, 0.9])
        mask = reject_bottom_percentile(conf, 0.5)
        np.testing.assert_array_equal(mask, [True, False])


class TestThresholds:
    def test_unseen_state_blocks_everything(self):
        state = ThresholdState(3)
        assert state.threshold_global() == np.inf
        conf = make_conf([0.99], [0])
        assert filter_labels(conf, state).labels[0] == -1

    def test_global_is_mean_plus_std(self):
        state = ThresholdState(3, step=1, global_mean=0.6, global_std=0.1, global_seen=True)
        assert state.threshold_global() == pytest.approx(0.7)

    def test_class_is_mean_minus_std_clamped(self):
        state = ThresholdState(
            2,
            class_mean=np.array([0.5, 0.1]),
            class_std=np.array([0.2, 0.4]),
            class_seen=np.array([True, True]),
        )
        np.testing.assert_allclose(state.threshold_class(), [0.3, 0.0])

    def test_hierarchy_takes_smaller(self):
        # global 0.9, class 0 threshold 0.4: a 0.5 point of class 0 passes,
        # class 1 (unseen, +inf) falls back to the global rule
        state = ThresholdState(
            2,
            global_mean=0.8, global_std=0.1, global_seen=True,
            class_mean=np.array([0.6, 0.0]),
            class_std=np.array([0.2, 0.0]),
            class_seen=np.array([True, False]),
        )
        conf = make_conf([0.5, 0.5, 0.95], [0, 1, 1], num_classes=2)
        got = filter_labels(conf, state)
        np.testing.assert_array_equal(got.labels, [0, -1, 1])

    def test_rejected_mask_overrides(self):
        state = ThresholdState(2, global_mean=0.0, global_std=0.0, global_seen=True)
        conf = make_conf([0.9, 0.9], [0, 1], num_classes=2)
        got = filter_labels(conf, state, rejected=np.array([True, False]))
        np.testing.assert_array_equal(got.labels, [-1, 1])

    def test_class_count_mismatch(self):
        with pytest.raises(ValueError):
            filter_labels(make_conf([0.5], [0], num_classes=4), ThresholdState(3))

    def test_fixed_threshold_uses_raw(self):
        conf = make_conf([0.9, 0.8], [0, 1], weighted=[0.1, 0.1])
        got = fixed_threshold_filter(conf, 0.85)
        np.testing.assert_array_equal(got.labels, [0, -1])


class TestBatchStats:
    def test_population_std(self):
        conf = make_conf([0.2, 0.4, 0.6, 0.8], [0, 0, 1, 1], num_classes=2)
        stats = batch_stats(conf)
        assert stats.global_mean == pytest.approx(0.5)
        assert stats.global_std == pytest.approx(np.array([0.2, 0.4, 0.6, 0.8]).std())
        assert stats.class_mean[0] == pytest.approx(0.3)
        assert stats.class_std[0] == pytest.approx(0.1)

    def test_absent_class_flagged(self):
        stats = batch_stats(make_conf([0.5], [1], num_classes=3))
        np.testing.assert_array_equal(stats.class_present, [False, True, False])

    def test_rejected_points_excluded(self):
        conf = make_conf([0.1, 0.5, 0.9], [0, 0, 0], num_classes=1)
        stats = batch_stats(conf, rejected=np.array([True, False, False]))
        assert stats.global_mean == pytest.approx(0.7)

    def test_empty_after_rejection(self):
        conf = make_conf([0.1], [0], num_classes=1)
        with pytest.raises(ValueError):
            batch_stats(conf, rejected=np.array([True]))


def constant_batch(mean, std, num_classes=2):
    return BatchStats(
        mean, std,
        np.full(num_classes, mean), np.full(num_classes, std),
        np.ones(num_classes, dtype=bool),
    )


class TestEmaUpdate:
    def test_warmup_is_running_average(self):
        # momentum 1/(t+1) during warmup makes the EMA an exact arithmetic mean
        state = ThresholdState(1, warmup_len=10)
        values = [0.2, 0.4, 0.9, 0.1, 0.6]
        for v in values:
            state = ema_update(state, constant_batch(v, 0.0, 1))
        assert state.global_mean == pytest.approx(np.mean(values))

    def test_first_batch_adopted_outright(self):
        state = ThresholdState(2, warmup_len=0)
        state = ema_update(state, constant_batch(0.7, 0.05))
        assert state.global_mean == pytest.approx(0.7)
        assert state.global_std == pytest.approx(0.05)
        assert state.class_seen.all()

    def test_post_warmup_momentum(self):
        state = ThresholdState(1, momentum_global=0.1, momentum_class=0.01,
                               period=1, warmup_len=0)
        state = ema_update(state, constant_batch(0.5, 0.0, 1))
        state = ema_update(state, constant_batch(1.0, 0.0, 1))
        assert state.global_mean == pytest.approx(0.1 * 1.0 + 0.9 * 0.5)
        assert state.class_mean[0] == pytest.approx(0.01 * 1.0 + 0.99 * 0.5)

    def test_period_gates_updates(self):
        state = ThresholdState(1, period=3, warmup_len=0)
        state = ema_update(state, constant_batch(0.5, 0.0, 1))  # step 0: applied
        held = ema_update(state, constant_batch(0.9, 0.0, 1))   # step 1: held
        assert held.global_mean == state.global_mean
        assert held.step == state.step + 1
        held = ema_update(held, constant_batch(0.9, 0.0, 1))    # step 2: held
        moved = ema_update(held, constant_batch(0.9, 0.0, 1))   # step 3: applied
        assert moved.global_mean != held.global_mean

    def test_unseen_class_keeps_inf_threshold(self):
        state = ThresholdState(2, warmup_len=0)
        batch = BatchStats(0.5, 0.1, np.array([0.5, 0.0]), np.array([0.1, 0.0]),
                           np.array([True, False]))
        state = ema_update(state, batch)
        thr = state.threshold_class()
        assert np.isfinite(thr[0]) and thr[1] == np.inf

    def test_late_first_sighting_adopts_batch(self):
        state = ThresholdState(2, warmup_len=0, period=1)
        only_zero = BatchStats(0.5, 0.1, np.array([0.5, 0.0]), np.array([0.1, 0.0]),
                               np.array([True, False]))
        for _ in range(5):
            state = ema_update(state, only_zero)
        both = constant_batch(0.9, 0.02)
        state = ema_update(state, both)
        assert state.class_mean[1] == pytest.approx(0.9)  # adopted, not blended
        assert state.class_mean[0] != pytest.approx(0.9)  # blended


class TestRetainedFractions:
    def test_fraction_and_nan(self):
        conf = make_conf([0.9, 0.2, 0.8], [0, 0, 1], num_classes=3)
        state = ThresholdState(3, global_mean=0.5, global_std=0.0, global_seen=True,
                               step=1)
        labels = filter_labels(conf, state)
        frac = retained_fractions(labels, conf)
        assert frac[0] == pytest.approx(0.5)
        assert frac[1] == pytest.approx(1.0)
        assert np.isnan(frac[2])


class TestFilterProperties:
    @given(
        weighted=arrays(np.float64, st.integers(1, 80),
                        elements=st.floats(0.0, 1.0)),
        gmean=st.floats(0.0, 1.0),
        gstd=st.floats(0.0, 0.5),
    )
    @settings(max_examples=60, deadline=None)
    def test_kept_points_clear_some_threshold(self, weighted, gmean, gstd):
        n = len(weighted)
        labels = np.arange(n) % 2
        conf = ConfidenceSet(weighted, weighted, labels, 2)
        state = ThresholdState(
            2, global_mean=gmean, global_std=gstd, global_seen=True,
            class_mean=np.array([0.4, 0.6]), class_std=np.array([0.1, 0.2]),
            class_seen=np.array([True, True]),
        )
        got = filter_labels(conf, state)
        thr = np.minimum(state.threshold_global(),
                         state.threshold_class()[conf.pseudo_labels])
        kept = got.labels >= 0
        np.testing.assert_array_equal(kept, conf.weighted >= thr)

    @given(st.integers(0, 400), st.floats(0.0, 0.2))
    @settings(max_examples=60, deadline=None)
    def test_rejection_count_is_floor(self, n, fraction):
        rng = np.random.default_rng(n)
        conf = ConfidenceSet(
            rng.uniform(size=n), rng.uniform(size=n),
            np.zeros(n, dtype=np.int64), 1,
        )
        mask = reject_bottom_percentile(conf, fraction)
        assert mask.sum() == int(np.floor(fraction * n))

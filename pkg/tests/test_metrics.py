import numpy as np
import pytest

from scanadapt.cloud import LabelSet
from scanadapt.metrics import confusion_matrix, iou


def labelset(values, c=3):
    return LabelSet(np.asarray(values), c)


class TestConfusionMatrix:
    def test_rows_truth_cols_pred(self):
        pred = labelset([0, 1, 2, 1])
        truth = labelset([0, 1, 1, 2])
        m = confusion_matrix(pred, truth)
        expect = np.array([[1, 0, 0], [0, 1, 1], [0, 1, 0]])
        np.testing.assert_array_equal(m, expect)

    def test_unknown_truth_dropped(self):
        pred = labelset([0, 1])
        truth = labelset([-1, 1])
        m = confusion_matrix(pred, truth)
        assert m.sum() == 1

    def test_unknown_pred_not_in_matrix(self):
        pred = labelset([-1, 0])
        truth = labelset([0, 0])
        m = confusion_matrix(pred, truth)
        assert m.sum() == 1  # the abstained point is in no cell
        assert m[0, 0] == 1


class TestIou:
    def test_perfect_prediction(self):
        y = labelset([0, 1, 2, 1, 0])
        report = iou(y, y)
        np.testing.assert_allclose(report.per_class, [100.0, 100.0, 100.0])
        assert report.miou == pytest.approx(100.0)

    def test_hand_computed(self):
        truth = labelset([0, 0, 1, 1])
        pred = labelset([0, 1, 1, 1])
        report = iou(pred, truth)
        # class 0: tp=1 fp=0 fn=1 -> 1/2; class 1: tp=2 fp=1 fn=0 -> 2/3
        assert report.per_class[0] == pytest.approx(50.0)
        assert report.per_class[1] == pytest.approx(200 / 3)
        assert np.isnan(report.per_class[2])
        assert report.miou == pytest.approx((50 + 200 / 3) / 2)

    def test_abstained_prediction_counts_as_miss(self):
        truth = labelset([0, 0])
        pred = labelset([0, -1])
        report = iou(pred, truth)
        assert report.per_class[0] == pytest.approx(50.0)

    def test_unknown_truth_excluded_everywhere(self):
        truth = labelset([-1, -1, 1])
        pred = labelset([0, 1, 1])
        report = iou(pred, truth)
        # class 0 absent from truth: NaN, not dragged down by the fp
        # against unknown ground truth
        assert np.isnan(report.per_class[0])
        assert report.per_class[1] == pytest.approx(100.0)
        assert report.miou == pytest.approx(100.0)

    def test_false_positive_against_other_class(self):
        truth = labelset([0, 1])
        pred = labelset([1, 1])
        report = iou(pred, truth)
        assert report.per_class[0] == pytest.approx(0.0)
        assert report.per_class[1] == pytest.approx(50.0)

    def test_mean_over_present_classes(self):
        truth = labelset([2, 2, 2])
        pred = labelset([2, 2, 0])
        report = iou(pred, truth)
        assert report.miou == pytest.approx(report.per_class[2])

    def test_support_counts(self):
        truth = labelset([0, 0, 1, -1])
        report = iou(labelset([0, 0, 1, 0]), truth)
        np.testing.assert_array_equal(report.support, [2, 1, 0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            iou(labelset([0]), labelset([0, 1]))

    def test_brute_force_random_cases(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 80))
            c = int(rng.integers(2, 7))
            truth = rng.integers(-1, c, n)
            pred = rng.integers(-1, c, n)
            report = iou(LabelSet(pred, c), LabelSet(truth, c))
            vals = []
            for k in range(c):
                if not (truth == k).any():
                    assert np.isnan(report.per_class[k])
                    continue
                valid = truth >= 0
                tp = ((pred == k) & (truth == k)).sum()
                fp = ((pred == k) & valid & (truth != k)).sum()
                fn = ((truth == k) & (pred != k)).sum()
                expect = 100.0 * tp / (tp + fp + fn) if tp + fp + fn else 0.0
                assert report.per_class[k] == pytest.approx(expect)
                vals.append(expect)
            assert report.miou == pytest.approx(np.mean(vals))

"""Segmentation metrics via an explicit confusion matrix."""

from dataclasses import dataclass

import numpy as np

from .cloud import LabelSet


@dataclass(frozen=True)
class IouReport:
    """Per-class IoU in percent (NaN where the class is absent from the
    truth) and their mean over present classes."""

    per_class: np.ndarray
    miou: float
    support: np.ndarray  # truth point count per class


def confusion_matrix(pred: LabelSet, truth: LabelSet) -> np.ndarray:
    """C x C counts, rows = truth class, cols = predicted class.

    Points with truth -1 are dropped. Predicted -1 on an evaluated point
    counts as a miss for every class (kept out of every column).
    """
    if pred.num_classes != truth.num_classes:
        raise ValueError("class counts differ")
    yp = pred.labels
    yt = truth.labels
    if yp.shape[0] != yt.shape[0]:
        raise ValueError("prediction and truth lengths differ")
    c = truth.num_classes
    keep = yt >= 0
    yp = yp[keep]
    yt = yt[keep]
    mat = np.zeros((c, c), dtype=np.int64)
    valid = yp >= 0
    np.add.at(mat, (yt[valid], yp[valid]), 1)
    return mat


def iou(pred: LabelSet, truth: LabelSet) -> IouReport:
    """IoU_c = TP / (TP + FP + FN) per class, mIoU = mean over classes
    that occur in the truth, both in percent."""
    mat = confusion_matrix(pred, truth)
    tp = np.diag(mat).astype(np.float64)
    # truth counts rather than matrix row sums so that points predicted
    # -1 still count as misses
    truth_counts = np.zeros(truth.num_classes, dtype=np.int64)
    evaluated = truth.labels[truth.labels >= 0]
    np.add.at(truth_counts, evaluated, 1)
    fn = truth_counts - tp
    fp = mat.sum(axis=0) - tp
    per_class = np.full(truth.num_classes, np.nan)
    present = truth_counts > 0
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(denom > 0, tp / denom, 0.0)
    per_class[present] = 100.0 * vals[present]
    miou = float(np.mean(per_class[present])) if present.any() else float("nan")
    return IouReport(per_class, miou, truth_counts)

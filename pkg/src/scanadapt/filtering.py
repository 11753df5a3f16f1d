"""Dynamic pseudo-label filtering.

Teacher softmax scores are turned into a class-balanced, reliability
filtered pseudo-label set in four steps: distance-decay weighting of the
raw confidences, rejection of the lowest percentile per scan, hierarchical
thresholding against the smaller of a global and a per-class threshold,
and a dual EMA that tracks the confidence statistics those thresholds are
derived from. The global threshold (mean + std of all weighted
confidences) tightens as self-training grows overconfident; the per-class
threshold (mean - std) relaxes for uncertain classes so minorities are
not starved.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .cloud import UNKNOWN_LABEL, LabelSet


@dataclass
class ConfidenceSet:
    """Per-point pseudo-labels with raw and distance-weighted confidences."""

    raw: np.ndarray
    weighted: np.ndarray
    pseudo_labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.raw = np.ascontiguousarray(self.raw, dtype=np.float64)
        self.weighted = np.ascontiguousarray(self.weighted, dtype=np.float64)
        self.pseudo_labels = np.ascontiguousarray(self.pseudo_labels, dtype=np.int64)
        n = self.raw.shape[0]
        if self.weighted.shape[0] != n or self.pseudo_labels.shape[0] != n:
            raise ValueError("raw, weighted and pseudo_labels must have equal length")
        if n and (
            self.pseudo_labels.min() < 0 or self.pseudo_labels.max() >= self.num_classes
        ):
            raise ValueError("pseudo-labels must lie in [0, num_classes) before filtering")

    def __len__(self) -> int:
        return self.raw.shape[0]

    @classmethod
    def concat(cls, parts: list["ConfidenceSet"]) -> "ConfidenceSet":
        if not parts:
            raise ValueError("nothing to concatenate")
        num_classes = parts[0].num_classes
        return cls(
            np.concatenate([p.raw for p in parts]),
            np.concatenate([p.weighted for p in parts]),
            np.concatenate([p.pseudo_labels for p in parts]),
            num_classes,
        )


@dataclass
class BatchStats:
    """Confidence mean/std of one batch, globally and per class."""

    global_mean: float
    global_std: float
    class_mean: np.ndarray
    class_std: np.ndarray
    class_present: np.ndarray  # bool; False entries carry no data


@dataclass(frozen=True)
class ThresholdState:
    """EMA-tracked confidence statistics behind the dynamic thresholds.

    Thresholds are always recomputed from the current statistics:
    global threshold = mean + std, per-class threshold = mean - std
    (clamped at 0). A class never observed has threshold +inf, leaving
    only the global rule in effect. During warmup (step <= warmup_len)
    the momentum is 1/(step+1) and updates happen every step; afterwards
    the configured momenta apply every `period` steps.
    """

    num_classes: int
    momentum_global: float = 0.1
    momentum_class: float = 0.01
    period: int = 500
    warmup_len: int = 500
    step: int = 0
    global_mean: float = 0.0
    global_std: float = 0.0
    global_seen: bool = False
    class_mean: np.ndarray = field(default=None)
    class_std: np.ndarray = field(default=None)
    class_seen: np.ndarray = field(default=None)

    def __post_init__(self):
        if not (0 <= self.momentum_global < 1 and 0 <= self.momentum_class < 1):
            raise ValueError("momenta must lie in [0, 1)")
        if self.period < 1 or self.warmup_len < 0:
            raise ValueError("period must be >= 1 and warmup_len >= 0")
        if self.class_mean is None:
            object.__setattr__(self, "class_mean", np.zeros(self.num_classes))
        if self.class_std is None:
            object.__setattr__(self, "class_std", np.zeros(self.num_classes))
        if self.class_seen is None:
            object.__setattr__(self, "class_seen", np.zeros(self.num_classes, dtype=bool))

    def threshold_global(self) -> float:
        if not self.global_seen:
            return np.inf
        return self.global_mean + self.global_std

    def threshold_class(self) -> np.ndarray:
        """Per-class thresholds; +inf where a class has never been seen."""
        thr = np.maximum(self.class_mean - self.class_std, 0.0)
        return np.where(self.class_seen, thr, np.inf)


def infer_pseudo_labels(logits: np.ndarray, num_classes: int) -> ConfidenceSet:
    """Argmax labels and max-softmax confidences from teacher logits.

    Weighted confidences start equal to the raw ones until distance
    weighting is applied. Argmax ties take the lowest class index.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != num_classes:
        raise ValueError(
            f"logits shape {logits.shape} does not match {num_classes} classes"
        )
    if not np.isfinite(logits).all():
        raise ValueError("logits must be finite")
    labels, conf = kernels.softmax_confidence(logits)
    return ConfidenceSet(conf, conf.copy(), labels, num_classes)


def distance_weight(d_norm, alpha: float):
    """Confidence decay exp(-alpha * d) for normalized distances in [0, 1]."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    return np.exp(-alpha * np.asarray(d_norm, dtype=np.float64))


def apply_distance_weights(
    conf: ConfidenceSet, d_norm: np.ndarray, alpha: float
) -> ConfidenceSet:
    """New ConfidenceSet with weighted = raw * exp(-alpha * d_norm)."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    weighted = kernels.decay_weights(d_norm, alpha, conf.raw)
    return replace(conf, weighted=weighted)


def reject_bottom_percentile(conf: ConfidenceSet, fraction: float) -> np.ndarray:
    """Mask marking the floor(fraction * N) lowest weighted confidences.

    Ties at the cut reject the lower point index first. Rejection is per
    scan so the outcome is independent of batch composition.
    """
    if not 0 <= fraction < 1:
        raise ValueError("fraction must lie in [0, 1)")
    n = len(conf)
    k = int(np.floor(fraction * n))
    mask = np.zeros(n, dtype=bool)
    if k > 0:
        order = np.argsort(conf.weighted, kind="stable")
        mask[order[:k]] = True
    return mask


def filter_labels(
    conf: ConfidenceSet,
    state: ThresholdState,
    rejected: Optional[np.ndarray] = None,
) -> LabelSet:
    """Keep pseudo-labels whose weighted confidence clears the smaller of
    the global and the class threshold; everything else becomes -1."""
    if conf.num_classes != state.num_classes:
        raise ValueError(
            f"confidence set has {conf.num_classes} classes, state has {state.num_classes}"
        )
    thr = np.minimum(state.threshold_global(), state.threshold_class()[conf.pseudo_labels])
    keep = conf.weighted >= thr
    if rejected is not None:
        keep &= ~rejected
    labels = np.where(keep, conf.pseudo_labels, UNKNOWN_LABEL)
    return LabelSet(labels, state.num_classes)


def fixed_threshold_filter(conf: ConfidenceSet, threshold: float) -> LabelSet:
    """Baseline rule: keep points whose raw confidence reaches a fixed bar."""
    labels = np.where(conf.raw >= threshold, conf.pseudo_labels, UNKNOWN_LABEL)
    return LabelSet(labels, conf.num_classes)


def batch_stats(
    conf: ConfidenceSet, rejected: Optional[np.ndarray] = None
) -> BatchStats:
    """Mean and population std of the weighted confidences in one batch.

    Bottom-percentile rejected points are excluded. Classes absent from
    the batch are flagged not-present so the EMA can carry prior values.
    """
    weighted = conf.weighted
    labels = conf.pseudo_labels
    if rejected is not None:
        weighted = weighted[~rejected]
        labels = labels[~rejected]
    if weighted.size == 0:
        raise ValueError("batch has no confidences")
    class_mean = np.zeros(conf.num_classes)
    class_std = np.zeros(conf.num_classes)
    class_present = np.zeros(conf.num_classes, dtype=bool)
    for c in range(conf.num_classes):
        vals = weighted[labels == c]
        if vals.size:
            class_present[c] = True
            class_mean[c] = vals.mean()
            class_std[c] = vals.std()
    return BatchStats(
        float(weighted.mean()), float(weighted.std()), class_mean, class_std, class_present
    )


def ema_update(state: ThresholdState, batch: BatchStats) -> ThresholdState:
    """One per-iteration EMA step; statistics move only every `period` steps.

    New batch statistics enter with weight `momentum`; a class observed
    for the first time adopts the batch values outright.
    """
    t = state.step
    if t <= state.warmup_len:
        momentum_g = momentum_c = 1.0 / (t + 1)
        period = 1
    else:
        momentum_g = state.momentum_global
        momentum_c = state.momentum_class
        period = state.period
    if t % period != 0:
        return replace(state, step=t + 1)

    if state.global_seen:
        gmean = momentum_g * batch.global_mean + (1 - momentum_g) * state.global_mean
        gstd = momentum_g * batch.global_std + (1 - momentum_g) * state.global_std
    else:
        gmean, gstd = batch.global_mean, batch.global_std

    cmean = state.class_mean.copy()
    cstd = state.class_std.copy()
    cseen = state.class_seen.copy()
    for c in range(state.num_classes):
        if not batch.class_present[c]:
            continue
        if cseen[c]:
            cmean[c] = momentum_c * batch.class_mean[c] + (1 - momentum_c) * cmean[c]
            cstd[c] = momentum_c * batch.class_std[c] + (1 - momentum_c) * cstd[c]
        else:
            cmean[c] = batch.class_mean[c]
            cstd[c] = batch.class_std[c]
            cseen[c] = True
    return replace(
        state,
        step=t + 1,
        global_mean=float(gmean),
        global_std=float(gstd),
        global_seen=True,
        class_mean=cmean,
        class_std=cstd,
        class_seen=cseen,
    )


def retained_fractions(labels: LabelSet, conf: ConfidenceSet) -> np.ndarray:
    """Fraction of each pseudo-label class that survived filtering (NaN if absent)."""
    out = np.full(conf.num_classes, np.nan)
    for c in range(conf.num_classes):
        total = int((conf.pseudo_labels == c).sum())
        if total:
            kept = int(((conf.pseudo_labels == c) & (labels.labels == c)).sum())
            out[c] = kept / total
    return out

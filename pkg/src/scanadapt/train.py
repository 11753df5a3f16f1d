"""Mean-teacher self-training loop, desk scale.

`pretrain` fits the student on labeled source scans with plain SGD on
the Soft Dice objective. `adapt` then runs the adaptation loop: the
teacher predicts pseudo-labels on a target scan, the dynamic filter
keeps the trustworthy ones, the augmentation pipeline aligns both
domains, the pair is mixed in both directions, the student takes one
gradient step on the combined objective and the teacher tracks the
student by EMA on a fixed cadence.

Randomness is split into named streams keyed by iteration (or pair
index), so the standalone filter/augment/mix commands reproduce the
fused loop's draws for the same pair and the loop itself is bit
reproducible.
"""

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import model
from .augment import AugmentConfig, StageToggles, run_pipeline, uniform_jitter
from .cloud import LabelSet, PointCloud, normalized_ranges
from .features import FeatureConfig, compute_features
from .filtering import (
    ConfidenceSet,
    ThresholdState,
    apply_distance_weights,
    batch_stats,
    ema_update,
    filter_labels,
    fixed_threshold_filter,
    infer_pseudo_labels,
    reject_bottom_percentile,
)
from .losses import LossWeights, overall_loss, scan_objective
from .mixing import REGION_CHOICES, DEFAULT_PITCH_BOUNDS, mix_pair
from .rng import STREAM_AUGMENT, STREAM_MIX, RandomStream
from .scanio import atomic_write_bytes

FILTER_DYNAMIC = "dynamic"
FILTER_FIXED = "fixed"

AUGMENT_PRIOR = "prior"
AUGMENT_UNIFORM = "uniform"
AUGMENT_OFF = "off"


@dataclass(frozen=True)
class FilterConfig:
    """Dynamic filtering knobs; the momenta/cadence defaults follow the
    reference operating point for large rotating-scanner datasets."""

    alpha: float = 0.5
    bottom_fraction: float = 0.01
    momentum_global: float = 0.1
    momentum_class: float = 0.01
    period: int = 500
    warmup_len: int = 500
    mode: str = FILTER_DYNAMIC
    fixed_threshold: float = 0.85

    def __post_init__(self):
        if self.mode not in (FILTER_DYNAMIC, FILTER_FIXED):
            raise ValueError(f"unknown filter mode {self.mode!r}")
        if self.alpha < 0 or not 0 <= self.bottom_fraction < 1:
            raise ValueError("bad filter config")
        if not 0 < self.fixed_threshold < 1:
            raise ValueError("fixed_threshold must lie in (0, 1)")


@dataclass(frozen=True)
class MixConfig:
    region_choices: tuple = REGION_CHOICES
    pitch_low: float = DEFAULT_PITCH_BOUNDS[0]
    pitch_high: float = DEFAULT_PITCH_BOUNDS[1]

    def __post_init__(self):
        if not self.region_choices or any(r < 2 for r in self.region_choices):
            raise ValueError("region choices must all be >= 2")
        if not self.pitch_low < self.pitch_high:
            raise ValueError("pitch bounds must satisfy low < high")

    @property
    def bounds(self):
        return (self.pitch_low, self.pitch_high)


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 16
    learning_rate: float = 0.2
    pretrain_epochs: int = 40
    iterations: int = 200
    batch_size: int = 1
    teacher_momentum: float = 0.9
    teacher_period: int = 500
    seg_weight: float = 1.0
    consistency_weight: float = 1.0
    augment_mode: str = AUGMENT_PRIOR
    uniform_sigma: float = 0.0275
    stages: StageToggles = field(default_factory=StageToggles)

    def __post_init__(self):
        if self.hidden < 1 or self.learning_rate <= 0:
            raise ValueError("hidden must be >= 1 and learning_rate positive")
        if self.iterations < 0 or self.pretrain_epochs < 0 or self.batch_size < 1:
            raise ValueError("bad iteration counts")
        if not 0 <= self.teacher_momentum <= 1 or self.teacher_period < 1:
            raise ValueError("bad teacher EMA settings")
        if self.augment_mode not in (AUGMENT_PRIOR, AUGMENT_UNIFORM, AUGMENT_OFF):
            raise ValueError(f"unknown augment mode {self.augment_mode!r}")

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.seg_weight, self.consistency_weight)


@dataclass
class TelemetryRow:
    """One adaptation (or standalone filter) iteration."""

    iteration: int
    points: int
    warmup: bool
    tau_global: float
    tau_class: np.ndarray
    pseudo_counts: np.ndarray
    kept_counts: np.ndarray
    kept_fixed85: np.ndarray
    kept_fixed90: np.ndarray
    loss_total: float = float("nan")
    dice_s2t: float = float("nan")
    ce_s2t: float = float("nan")
    dice_t2s: float = float("nan")
    ce_t2s: float = float("nan")

    def retained_fractions(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(
                self.pseudo_counts > 0, self.kept_counts / self.pseudo_counts, np.nan
            )


class ConfidenceHistogram:
    """Per-class histogram of raw and weighted confidences, 100 bins on
    [0, 1] so 0.85 and 0.9 fall on bin edges."""

    def __init__(self, num_classes: int, bins: int = 100):
        self.num_classes = num_classes
        self.edges = np.linspace(0.0, 1.0, bins + 1)
        self.raw = np.zeros((num_classes, bins), dtype=np.int64)
        self.weighted = np.zeros((num_classes, bins), dtype=np.int64)

    def add(self, conf: ConfidenceSet) -> None:
        for c in range(self.num_classes):
            sel = conf.pseudo_labels == c
            if not sel.any():
                continue
            self.raw[c] += np.histogram(conf.raw[sel], bins=self.edges)[0]
            self.weighted[c] += np.histogram(conf.weighted[sel], bins=self.edges)[0]

    def total(self) -> int:
        return int(self.raw.sum())


def _class_counts(values: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros(num_classes, dtype=np.int64)
    valid = values >= 0
    np.add.at(out, values[valid], 1)
    return out


def filter_step(
    conf: ConfidenceSet, state: ThresholdState, cfg: FilterConfig
) -> tuple[LabelSet, ThresholdState]:
    """One update-then-filter pass over a weighted confidence set."""
    if cfg.mode == FILTER_FIXED:
        return fixed_threshold_filter(conf, cfg.fixed_threshold), state
    rejected = reject_bottom_percentile(conf, cfg.bottom_fraction)
    state = ema_update(state, batch_stats(conf, rejected))
    return filter_labels(conf, state, rejected), state


def teacher_confidences(
    teacher: model.ModelParams,
    cloud: PointCloud,
    alpha: float,
    feature_cfg: FeatureConfig,
    features: Optional[np.ndarray] = None,
) -> ConfidenceSet:
    """Teacher forward pass to distance-weighted confidences."""
    if features is None:
        features = compute_features(cloud, feature_cfg)
    logits = model.forward(teacher, features)
    conf = infer_pseudo_labels(logits, teacher.num_classes)
    d_norm = normalized_ranges(cloud, feature_cfg.max_range)
    return apply_distance_weights(conf, d_norm, alpha)


def _telemetry_row(
    iteration: int, conf: ConfidenceSet, labels: LabelSet, state: ThresholdState,
    cfg: FilterConfig,
) -> TelemetryRow:
    num_classes = conf.num_classes
    kept = np.zeros(num_classes, dtype=np.int64)
    for c in range(num_classes):
        kept[c] = int(((conf.pseudo_labels == c) & (labels.labels == c)).sum())
    if cfg.mode == FILTER_FIXED:
        tau_global = cfg.fixed_threshold
        tau_class = np.full(num_classes, np.nan)
        warmup = False
    else:
        tau_global = state.threshold_global()
        tau_class = state.threshold_class()
        warmup = iteration <= cfg.warmup_len
    return TelemetryRow(
        iteration=iteration,
        points=len(conf),
        warmup=warmup,
        tau_global=float(tau_global),
        tau_class=tau_class,
        pseudo_counts=_class_counts(conf.pseudo_labels, num_classes),
        kept_counts=kept,
        kept_fixed85=_class_counts(
            np.where(conf.raw >= 0.85, conf.pseudo_labels, -1), num_classes
        ),
        kept_fixed90=_class_counts(
            np.where(conf.raw >= 0.90, conf.pseudo_labels, -1), num_classes
        ),
    )


def teacher_ema_update(
    teacher: model.ModelParams,
    student: model.ModelParams,
    momentum: float,
    period: int,
    step: int,
) -> model.ModelParams:
    """EMA pull of the teacher toward the student, applied on steps that
    are multiples of `period` (steps are 1-based)."""
    if teacher.theta.shape != student.theta.shape:
        raise ValueError("teacher and student parameter shapes differ")
    if period < 1:
        raise ValueError("period must be >= 1")
    if step % period != 0:
        return teacher
    return teacher.replace_theta(
        momentum * teacher.theta + (1.0 - momentum) * student.theta
    )


def pretrain(
    source: Sequence[tuple[PointCloud, LabelSet]],
    params: model.ModelParams,
    epochs: int,
    learning_rate: float,
    stream: RandomStream,
    feature_cfg: FeatureConfig = FeatureConfig(),
) -> model.ModelParams:
    """Supervised SGD on Soft Dice over the source scans only.

    Scan order reshuffles every epoch from the stream keyed by epoch.
    """
    if not source:
        raise ValueError("empty source dataset")
    feats = [compute_features(cloud, feature_cfg) for cloud, _ in source]
    current = params.copy()
    dice_only = LossWeights(1.0, 0.0)
    for epoch in range(epochs):
        order = stream.generator(epoch).permutation(len(source))
        for i in order:
            _, grad, _ = scan_objective(current, feats[i], source[i][1], dice_only)
            current = current.replace_theta(current.theta - learning_rate * grad)
    return current


@dataclass
class AdaptResult:
    student: model.ModelParams
    teacher: model.ModelParams
    state: ThresholdState
    telemetry: list
    histogram: ConfidenceHistogram
    first_iteration: Optional[dict] = None


def adapt(
    source: Sequence[tuple[PointCloud, LabelSet]],
    target: Sequence[PointCloud],
    init: model.ModelParams,
    seed: int,
    train_cfg: TrainConfig = TrainConfig(),
    filter_cfg: FilterConfig = FilterConfig(),
    augment_cfg: AugmentConfig = AugmentConfig(),
    mix_cfg: MixConfig = MixConfig(),
    feature_cfg: FeatureConfig = FeatureConfig(),
    state: Optional[ThresholdState] = None,
    capture_first_iteration: bool = False,
) -> AdaptResult:
    """Run the self-training loop for the configured iteration count.

    Scan pairs cycle round-robin through both sets. With
    `capture_first_iteration` the filtered labels and both mixed scans
    of iteration 0 are kept on the result for pipeline audits.
    """
    if not source or not target:
        raise ValueError("source and target sets must be nonempty")
    student = init.copy()
    teacher = init.copy()
    num_classes = init.num_classes
    if state is None:
        state = ThresholdState(
            num_classes,
            momentum_global=filter_cfg.momentum_global,
            momentum_class=filter_cfg.momentum_class,
            period=filter_cfg.period,
            warmup_len=filter_cfg.warmup_len,
        )
    aug_stream = RandomStream(seed, STREAM_AUGMENT)
    mix_stream = RandomStream(seed, STREAM_MIX)
    telemetry = []
    histogram = ConfidenceHistogram(num_classes)
    first = None
    # teacher features depend only on the unaugmented target scans, so
    # compute them once up front
    tgt_feats = [compute_features(cloud, feature_cfg) for cloud in target]

    batch = train_cfg.batch_size
    for t in range(train_cfg.iterations):
        # teacher inference and per-scan bottom rejection for the batch
        pairs = []
        confs = []
        rejects = []
        for i in range(batch):
            k = t * batch + i
            tgt_idx = k % len(target)
            conf = teacher_confidences(
                teacher, target[tgt_idx], filter_cfg.alpha, feature_cfg,
                features=tgt_feats[tgt_idx],
            )
            histogram.add(conf)
            confs.append(conf)
            rejects.append(
                reject_bottom_percentile(conf, filter_cfg.bottom_fraction)
                if filter_cfg.mode == FILTER_DYNAMIC
                else None
            )
            pairs.append((source[k % len(source)], target[tgt_idx]))

        # one statistics update from the pooled batch, then per-scan filtering
        if filter_cfg.mode == FILTER_DYNAMIC:
            pooled = ConfidenceSet.concat(confs)
            pooled_rej = np.concatenate(rejects)
            state = ema_update(state, batch_stats(pooled, pooled_rej))
            filtered = [
                filter_labels(c, state, r) for c, r in zip(confs, rejects)
            ]
        else:
            pooled = ConfidenceSet.concat(confs)
            filtered = [
                fixed_threshold_filter(c, filter_cfg.fixed_threshold) for c in confs
            ]
        pooled_labels = LabelSet(
            np.concatenate([f.labels for f in filtered]), num_classes
        )
        row = _telemetry_row(t, pooled, pooled_labels, state, filter_cfg)

        # augment, mix and accumulate the student objective per pair
        loss_sum = 0.0
        grad_sum = np.zeros_like(student.theta)
        part_sum = {"s2t": [0.0, 0.0], "t2s": [0.0, 0.0]}
        for i in range(batch):
            k = t * batch + i
            (src_cloud, src_labels), tgt_cloud = pairs[i]
            tgt_labels = filtered[i]
            g_aug = aug_stream.generator(k)
            if train_cfg.augment_mode == AUGMENT_PRIOR:
                src_cloud, src_labels, tgt_cloud, tgt_labels = run_pipeline(
                    src_cloud, src_labels, tgt_cloud, tgt_labels,
                    augment_cfg, g_aug, train_cfg.stages,
                )
            elif train_cfg.augment_mode == AUGMENT_UNIFORM:
                src_cloud = uniform_jitter(
                    src_cloud, train_cfg.uniform_sigma, augment_cfg.jitter_clamp, g_aug
                )
                tgt_cloud = uniform_jitter(
                    tgt_cloud, train_cfg.uniform_sigma, augment_cfg.jitter_clamp, g_aug
                )

            g_mix = mix_stream.generator(k)
            regions = int(g_mix.choice(np.asarray(mix_cfg.region_choices)))
            s2t, t2s = mix_pair(
                src_cloud, src_labels, tgt_cloud, tgt_labels, regions, mix_cfg.bounds
            )
            loss, grad, parts = overall_loss(
                s2t, t2s, student, train_cfg.weights, feature_cfg
            )
            loss_sum += loss
            grad_sum += grad
            for key, (dice, ce) in parts.items():
                part_sum[key][0] += dice
                part_sum[key][1] += ce
            if k == 0 and capture_first_iteration:
                first = {"filtered": filtered[i], "s2t": s2t, "t2s": t2s}

        student = student.replace_theta(
            student.theta - train_cfg.learning_rate * grad_sum
        )
        teacher = teacher_ema_update(
            teacher, student, train_cfg.teacher_momentum, train_cfg.teacher_period, t + 1
        )

        row.loss_total = loss_sum
        row.dice_s2t, row.ce_s2t = part_sum["s2t"]
        row.dice_t2s, row.ce_t2s = part_sum["t2s"]
        telemetry.append(row)

    return AdaptResult(student, teacher, state, telemetry, histogram, first)


def evaluate(
    params: model.ModelParams,
    scans: Sequence[tuple[PointCloud, LabelSet]],
    feature_cfg: FeatureConfig = FeatureConfig(),
):
    """Pool predictions over all scans and score them; returns an
    IouReport."""
    from .metrics import iou

    if not scans:
        raise ValueError("nothing to evaluate")
    preds = []
    truths = []
    for cloud, labels in scans:
        feats = compute_features(cloud, feature_cfg)
        preds.append(model.predict(params, feats))
        truths.append(labels.labels)
    num_classes = scans[0][1].num_classes
    return iou(
        LabelSet(np.concatenate(preds), num_classes),
        LabelSet(np.concatenate(truths), num_classes),
    )


_CKPT_MAGIC = b"SCANADPT"
_CKPT_VERSION = 1


def save_checkpoint(
    path,
    student: model.ModelParams,
    teacher: model.ModelParams,
    state: ThresholdState,
    iteration: int,
) -> None:
    """Versioned little-endian binary dump of both parameter sets, the
    threshold state and the iteration counter.

    Layout: magic "SCANADPT", u4 version, u4 num_features, u4 hidden,
    u4 num_classes, f8 student theta, f8 teacher theta, filter state
    (f8 momentum_global, f8 momentum_class, u4 period, u4 warmup_len,
    u8 step, f8 global_mean, f8 global_std, u1 global_seen, f8 class
    means, f8 class stds, u1 class seen flags), u8 iteration.
    """
    if teacher.theta.shape != student.theta.shape:
        raise ValueError("teacher and student parameter shapes differ")
    if state.num_classes != student.num_classes:
        raise ValueError("state class count does not match the model")
    blob = bytearray()
    blob += _CKPT_MAGIC
    blob += struct.pack(
        "<IIII", _CKPT_VERSION, student.num_features, student.hidden, student.num_classes
    )
    blob += student.theta.astype("<f8").tobytes()
    blob += teacher.theta.astype("<f8").tobytes()
    blob += struct.pack(
        "<ddIIQddB",
        state.momentum_global,
        state.momentum_class,
        state.period,
        state.warmup_len,
        state.step,
        state.global_mean,
        state.global_std,
        int(state.global_seen),
    )
    blob += state.class_mean.astype("<f8").tobytes()
    blob += state.class_std.astype("<f8").tobytes()
    blob += state.class_seen.astype("u1").tobytes()
    blob += struct.pack("<Q", iteration)
    atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (student, teacher, state,
    iteration)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, nf, nh, nc = struct.unpack_from("<IIII", blob, 8)
    if version != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    o = 24
    p = model.param_count(nf, nh, nc)
    student = np.frombuffer(blob, "<f8", p, o).copy()
    o += 8 * p
    teacher = np.frombuffer(blob, "<f8", p, o).copy()
    o += 8 * p
    mg, mc, period, warmup, step, gmean, gstd, gseen = struct.unpack_from(
        "<ddIIQddB", blob, o
    )
    o += struct.calcsize("<ddIIQddB")
    cmean = np.frombuffer(blob, "<f8", nc, o).copy()
    o += 8 * nc
    cstd = np.frombuffer(blob, "<f8", nc, o).copy()
    o += 8 * nc
    cseen = np.frombuffer(blob, "u1", nc, o).copy().astype(bool)
    o += nc
    (iteration,) = struct.unpack_from("<Q", blob, o)
    o += 8
    if o != len(blob):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    state = ThresholdState(
        nc,
        momentum_global=mg,
        momentum_class=mc,
        period=period,
        warmup_len=warmup,
        step=step,
        global_mean=gmean,
        global_std=gstd,
        global_seen=bool(gseen),
        class_mean=cmean,
        class_std=cstd,
        class_seen=cseen,
    )
    return (
        model.ModelParams(student, nf, nh, nc),
        model.ModelParams(teacher, nf, nh, nc),
        state,
        int(iteration),
    )

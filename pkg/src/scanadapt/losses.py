"""Segmentation losses with analytic gradients.

Both losses operate on per-point class probabilities and ignore points
labeled -1 entirely: such points contribute nothing to any sum, so
padding a batch with unknown-label points never changes a loss value.
The gradients are exact (finite differences only audit them in tests).
Inputs are taken as given; rows are not renormalized, which keeps the
losses well defined under the small off-simplex perturbations a finite
difference check applies.
"""

from dataclasses import dataclass

import numpy as np

from . import model
from .cloud import LabelSet
from .features import FeatureConfig, compute_features
from .mixing import MixedScan


@dataclass(frozen=True)
class LossWeights:
    seg: float = 1.0
    consistency: float = 1.0

    def __post_init__(self):
        if self.seg < 0 or self.consistency < 0:
            raise ValueError("loss weights must be nonnegative")


def _checked(probs: np.ndarray, labels: LabelSet):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("probs must be (N, C)")
    y = labels.labels
    if y.shape[0] != probs.shape[0]:
        raise ValueError("probs and labels lengths differ")
    if probs.shape[1] != labels.num_classes:
        raise ValueError("probs column count does not match num_classes")
    return probs, y


def soft_dice_loss(probs: np.ndarray, labels: LabelSet):
    """1 - mean dice over classes present in the (unmasked) labels.

    dice_c = 2 * sum(p_c * y_c) / (sum(p_c^2) + sum(y_c)), sums over
    unmasked points. Returns (loss, gradient w.r.t. probs). All points
    masked: loss 0 with zero gradient.
    """
    probs, y = _checked(probs, labels)
    grad = np.zeros_like(probs)
    mask = y >= 0
    if not mask.any():
        return 0.0, grad
    p = probs[mask]
    ym = y[mask]
    present = np.unique(ym)
    dice_sum = 0.0
    sub_grad = np.zeros_like(p)
    for c in present:
        onehot = (ym == c).astype(np.float64)
        overlap = float(p[:, c] @ onehot)
        denom = float(p[:, c] @ p[:, c]) + float(onehot.sum())
        dice_sum += 2.0 * overlap / denom
        # d dice_c / d p_jc = 2 (y_jc * denom - 2 * overlap * p_jc) / denom^2
        sub_grad[:, c] = 2.0 * (onehot * denom - 2.0 * overlap * p[:, c]) / denom**2
    k = present.size
    loss = 1.0 - dice_sum / k
    grad[mask] = -sub_grad / k
    return float(loss), grad


def cross_entropy_loss(probs: np.ndarray, labels: LabelSet):
    """Mean negative log-probability of the labeled class over unmasked
    points; (loss, gradient w.r.t. probs)."""
    probs, y = _checked(probs, labels)
    grad = np.zeros_like(probs)
    mask = y >= 0
    m = int(mask.sum())
    if m == 0:
        return 0.0, grad
    rows = np.nonzero(mask)[0]
    picked = probs[rows, y[rows]]
    loss = float(-np.log(picked).mean())
    grad[rows, y[rows]] = -1.0 / (m * picked)
    return loss, grad


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Pull a probability-space gradient back through row-wise softmax."""
    inner = (grad_probs * probs).sum(axis=1, keepdims=True)
    return probs * (grad_probs - inner)


def scan_objective(
    params: "model.ModelParams",
    features: np.ndarray,
    labels: LabelSet,
    weights: LossWeights = LossWeights(),
):
    """Weighted dice + cross-entropy of one scan with the full parameter
    gradient. Returns (loss, grad_theta, (dice_term, ce_term))."""
    logits, hidden = model.forward_cached(params, features)
    probs = model.softmax(logits)
    dice, grad_dice = soft_dice_loss(probs, labels)
    ce, grad_ce = cross_entropy_loss(probs, labels)
    loss = weights.seg * dice + weights.consistency * ce
    grad_probs = weights.seg * grad_dice + weights.consistency * grad_ce
    grad_logits = softmax_backward(probs, grad_probs)
    grad = model.backprop(params, features, hidden, grad_logits)
    return float(loss), grad, (dice, ce)


def overall_loss(
    mixed_a: MixedScan,
    mixed_b: MixedScan,
    params: "model.ModelParams",
    weights: LossWeights = LossWeights(),
    feature_cfg: FeatureConfig = FeatureConfig(),
):
    """Student objective over both mixing directions, summed.

    Returns (loss, grad_theta, per-direction (dice, ce) terms keyed by
    the scans' direction tags).
    """
    total = 0.0
    grad = np.zeros_like(params.theta)
    parts = {}
    for mixed in (mixed_a, mixed_b):
        feats = compute_features(mixed.cloud, feature_cfg)
        loss, g, terms = scan_objective(params, feats, mixed.labels, weights)
        total += loss
        grad += g
        parts[mixed.direction] = terms
    return float(total), grad, parts

"""Tiny per-point classifier: features -> tanh hidden layer -> logits.

Parameters live in one flat float64 vector so the optimizer, the EMA
teacher update and the checkpoint format can treat them uniformly. The
tanh nonlinearity keeps the map smooth everywhere, which the finite
difference gradient audits rely on.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector plus the (in, hidden, out) layer sizes."""

    theta: np.ndarray
    num_features: int
    hidden: int
    num_classes: int

    def __post_init__(self):
        object.__setattr__(
            self, "theta", np.ascontiguousarray(self.theta, dtype=np.float64)
        )
        if self.theta.shape != (param_count(self.num_features, self.hidden, self.num_classes),):
            raise ValueError("flat parameter vector has the wrong length")
        if not np.isfinite(self.theta).all():
            raise ValueError("parameters must be finite")

    def unpack(self):
        """Views (W1, b1, W2, b2) into the flat vector."""
        f, h, c = self.num_features, self.hidden, self.num_classes
        o = 0
        w1 = self.theta[o : o + f * h].reshape(f, h)
        o += f * h
        b1 = self.theta[o : o + h]
        o += h
        w2 = self.theta[o : o + h * c].reshape(h, c)
        o += h * c
        b2 = self.theta[o : o + c]
        return w1, b1, w2, b2

    def replace_theta(self, theta: np.ndarray) -> "ModelParams":
        return ModelParams(theta, self.num_features, self.hidden, self.num_classes)

    def copy(self) -> "ModelParams":
        return self.replace_theta(self.theta.copy())


def param_count(num_features: int, hidden: int, num_classes: int) -> int:
    return num_features * hidden + hidden + hidden * num_classes + num_classes


def pack(w1, b1, w2, b2) -> np.ndarray:
    return np.concatenate([np.ravel(w1), np.ravel(b1), np.ravel(w2), np.ravel(b2)])


def init_params(
    num_features: int, hidden: int, num_classes: int, rng: np.random.Generator
) -> ModelParams:
    """Scaled-normal weights, zero biases."""
    w1 = rng.standard_normal((num_features, hidden)) / np.sqrt(num_features)
    w2 = rng.standard_normal((hidden, num_classes)) / np.sqrt(hidden)
    theta = pack(w1, np.zeros(hidden), w2, np.zeros(num_classes))
    return ModelParams(theta, num_features, hidden, num_classes)


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Per-point logits, shape (N, num_classes)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.num_features:
        raise ValueError(
            f"features shape {features.shape} does not match {params.num_features} inputs"
        )
    w1, b1, w2, b2 = params.unpack()
    hidden = np.tanh(features @ w1 + b1)
    return hidden @ w2 + b2


def forward_cached(params: ModelParams, features: np.ndarray):
    """Logits plus the hidden activations needed for backprop."""
    features = np.asarray(features, dtype=np.float64)
    w1, b1, w2, b2 = params.unpack()
    hidden = np.tanh(features @ w1 + b1)
    return hidden @ w2 + b2, hidden


def backprop(
    params: ModelParams,
    features: np.ndarray,
    hidden: np.ndarray,
    grad_logits: np.ndarray,
) -> np.ndarray:
    """Flat parameter gradient given d(loss)/d(logits)."""
    w1, b1, w2, b2 = params.unpack()
    grad_w2 = hidden.T @ grad_logits
    grad_b2 = grad_logits.sum(axis=0)
    grad_hidden = grad_logits @ w2.T
    grad_pre = grad_hidden * (1.0 - hidden * hidden)
    grad_w1 = features.T @ grad_pre
    grad_b1 = grad_pre.sum(axis=0)
    return pack(grad_w1, grad_b1, grad_w2, grad_b2)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, numerically shifted."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Argmax class per point (ties to the lowest index)."""
    return np.argmax(forward(params, features), axis=1).astype(np.int64)

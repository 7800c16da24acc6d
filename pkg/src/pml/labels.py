"""Scalar age <-> Gaussian label-distribution codec and the KL-style loss.

A scalar age y on c ordered classes becomes a length-c probability vector
whose component k is proportional to exp(-(k - y)^2 / (2 sigma^2)). The
Gaussian is renormalized over the truncated integer support so the vector
is a true distribution; the raw density does not sum to one on a finite
grid. Decoding takes the expectation of the class index, which recovers
sub-class precision for interior ages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError

LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class AgeLabelDistribution:
    """Length-c probability vector encoding one scalar age.

    Invariants (by construction): components are nonnegative, sum to one
    within 1e-12, and the argmax sits at `true_age`.
    """

    probs: np.ndarray
    sigma: float
    true_age: int


def encode(age: int, sigma: float, num_classes: int) -> AgeLabelDistribution:
    """Encode an integer age as a renormalized Gaussian over class indices.

    Component k carries the density value exp(-(k - age)^2 / (2 sigma^2))
    / (sigma sqrt(2 pi)), renormalized to sum exactly to one.
    """
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    if not np.isfinite(sigma) or sigma <= 0.0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if float(age) != int(age):
        raise DataError(f"age must be an integer class index, got {age}")
    age = int(age)
    if not 0 <= age < num_classes:
        raise DataError(f"age {age} outside [0, {num_classes - 1}]")
    k = np.arange(num_classes, dtype=np.float64)
    unnorm = np.exp(-((k - age) ** 2) / (2.0 * sigma * sigma)) / (sigma * np.sqrt(2.0 * np.pi))
    probs = unnorm / unnorm.sum()
    probs.setflags(write=False)
    return AgeLabelDistribution(probs=probs, sigma=float(sigma), true_age=age)


def _check_distribution(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise ShapeError(f"probability vector must be 1-D, got {probs.ndim}-D")
    if not np.all(np.isfinite(probs)):
        raise NumericError("probability vector has non-finite components")
    if np.any(probs < 0.0):
        raise NumericError(f"negative probability component (min {probs.min()})")
    total = probs.sum()
    if abs(total - 1.0) > 1e-9:
        raise NumericError(f"probability vector sums to {total}, expected 1 +- 1e-9")
    return probs


def decode_expectation(probs: np.ndarray) -> float:
    """Expected class index sum_k k * probs[k] of a validated distribution."""
    probs = _check_distribution(probs)
    return float(probs @ np.arange(len(probs), dtype=np.float64))


def decode_argmax(probs: np.ndarray) -> float:
    """Most probable class index; exposed for ablation against the expectation decoder."""
    probs = _check_distribution(probs)
    return float(np.argmax(probs))


def kl_loss(
    target: AgeLabelDistribution | np.ndarray, predicted: np.ndarray
) -> tuple[float, np.ndarray]:
    """Cross-entropy -sum_k y_k log yhat_k with the constant entropy term dropped.

    Returns the loss and its gradient with respect to the logits that
    produced `predicted`, assuming predicted = softmax(logits). Predicted
    components are floored at 1e-300 before the log to avoid -inf.
    """
    t = target.probs if isinstance(target, AgeLabelDistribution) else np.asarray(target, np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeError(f"target length {t.shape} does not match predicted length {p.shape}")
    if np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise NumericError("predicted vector must be finite and nonnegative")
    loss = float(-(t * np.log(np.maximum(p, LOG_FLOOR))).sum())
    grad_logits = p * t.sum() - t
    return loss, grad_logits

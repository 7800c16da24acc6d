"""One-vs-all margined softmax prediction and its KL-style objective.

Component k of the prediction competes the margin-reduced logit of class
k against the untouched logits of every other class:

    yhat*_k = exp(s_k - m_k) / (exp(s_k - m_k) + sum_{t != k} exp(s_t))

With all margins zero every component reduces to the standard softmax, so
the whole margin path collapses onto the plain cross-entropy baseline.
Components are each their own binary-style normalization and need not sum
to one. The loss is -sum_k y_k log yhat*_k averaged over the batch, with
exact analytic gradients to both logits and margins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .labels import LOG_FLOOR


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-stabilized softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class MarginedPrediction:
    components: np.ndarray  # yhat*, same shape as logits
    logits: np.ndarray
    margins: np.ndarray
    # scaled intermediates cached for the loss gradients
    _exp_logits: np.ndarray
    _denominators: np.ndarray


def predict_margined(logits: np.ndarray, margins: np.ndarray) -> MarginedPrediction:
    """Evaluate the one-vs-all prediction for one sample (1-D) or a batch (2-D).

    Stabilized by a per-row shift of the largest exponent, which keeps the
    computation finite for logit magnitudes up to about 1e3.
    """
    s = np.asarray(logits, dtype=np.float64)
    m = np.asarray(margins, dtype=np.float64)
    if s.shape != m.shape:
        raise ShapeError(f"logits shape {s.shape} does not match margins shape {m.shape}")
    if s.ndim not in (1, 2) or s.shape[-1] < 2:
        raise ShapeError("logits must be 1-D or 2-D with at least 2 classes")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(m))):
        raise NumericError("logits and margins must be finite")
    single = s.ndim == 1
    s2 = s.reshape(1, -1) if single else s
    m2 = m.reshape(1, -1) if single else m
    shift = np.maximum(s2.max(axis=1), (s2 - m2).max(axis=1))[:, None]
    exp_logits = np.exp(s2 - shift)
    exp_margined = np.exp(s2 - m2 - shift)
    rest = exp_logits.sum(axis=1, keepdims=True) - exp_logits
    denom = exp_margined + rest
    comp = exp_margined / denom
    if single:
        comp = comp[0]
        exp_logits = exp_logits[0]
        denom = denom[0]
    return MarginedPrediction(
        components=comp, logits=s, margins=m,
        _exp_logits=exp_logits, _denominators=denom,
    )


def margined_loss(
    targets: np.ndarray, prediction: MarginedPrediction
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss -mean_i sum_k y_ik log yhat*_ik plus gradients.

    Returns (loss, d_logits, d_margins) where the gradients are of the
    returned (batch-averaged) loss and have the same shape as the inputs.
    Components are floored at 1e-300 before the log.
    """
    y = np.asarray(targets, dtype=np.float64)
    comp = prediction.components
    if y.shape != comp.shape:
        raise ShapeError(f"targets shape {y.shape} does not match prediction shape {comp.shape}")
    single = comp.ndim == 1
    y2 = y.reshape(1, -1) if single else y
    comp2 = comp.reshape(1, -1) if single else comp
    exp_logits = prediction._exp_logits.reshape(comp2.shape)
    denom = prediction._denominators.reshape(comp2.shape)
    n = comp2.shape[0]

    losses = -(y2 * np.log(np.maximum(comp2, LOG_FLOOR))).sum(axis=1)
    loss = float(losses.mean())

    # d loss_i / d m_k = y_k (1 - yhat*_k); margins only enter component k
    d_margins = y2 * (1.0 - comp2) / n
    # d loss_i / d s_j = -y_j (1 - yhat*_j) + exp(s_j) * sum_{k != j} y_k / denom_k
    ratio = y2 / denom
    ratio_sum = ratio.sum(axis=1, keepdims=True)
    d_logits = (-y2 * (1.0 - comp2) + exp_logits * (ratio_sum - ratio)) / n

    if single:
        return loss, d_logits[0], d_margins[0]
    return loss, d_logits, d_margins

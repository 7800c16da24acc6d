"""Margin construction from class statistics.

Two margin families are produced by small shared-weight networks applied
row-wise to a statistics matrix (one row per class, width D + 1 + c):

* ordinal margins: each class row yields a location/spread pair
  (mu_j, sigma_j); mu_j is anchored at its own class index j through a
  bounded tanh offset, sigma_j is kept positive through softplus plus a
  floor. Discretizing the resulting Gaussian over class indices fills a
  c x c table whose row j carries margin mass concentrated around class j.
* variational margins: the residual of two statistics snapshots maps,
  row-wise, to one signed scalar per class, clamped to [-m_max, +m_max].

A per-sample margin vector is the true-class row of the ordinal table
weighted by lambda plus the variational vector weighted by beta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .nn import DenseNet, NetGradients
from .stats import StatsSnapshot


@dataclass(frozen=True)
class MarginMix:
    """Mixing weights; (0, 0) must reproduce the margin-free baseline exactly."""

    lam: float
    beta: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.lam) or self.lam < 0.0:
            raise ShapeError(f"lambda must be finite and >= 0, got {self.lam}")
        if not np.isfinite(self.beta) or self.beta < 0.0:
            raise ShapeError(f"beta must be finite and >= 0, got {self.beta}")


@dataclass
class OrdinalMargins:
    raw: np.ndarray     # (c, 2) network outputs, cached for backward
    mu: np.ndarray      # (c,) locations in class-index space
    sigma: np.ndarray   # (c,) spreads, >= sigma_min
    table: np.ndarray   # (c, c) discretized margins in [0, m_max]
    m_max: float
    mu_range: float
    sigma_min: float


@dataclass
class VariationalMargin:
    values: np.ndarray     # (c,) clamped to [-m_max, m_max]
    pre_clamp: np.ndarray  # (c,) cached for the clamp gradient mask
    m_max: float


def _as_matrix(stats: StatsSnapshot | np.ndarray) -> np.ndarray:
    m = stats.matrix if isinstance(stats, StatsSnapshot) else np.asarray(stats, np.float64)
    if m.ndim != 2:
        raise ShapeError(f"statistics input must be 2-D, got {m.ndim}-D")
    return m


def ordinal_forward(
    net: DenseNet,
    stats: StatsSnapshot | np.ndarray,
    *,
    m_max: float,
    mu_range: float,
    sigma_min: float,
) -> OrdinalMargins:
    """Map a statistics matrix row-wise through `net` and discretize.

    Row j of the table is m_max * exp(-(k - mu_j)^2 / (2 sigma_j^2)) over
    k = 0..c-1, with mu_j = j + tanh(out_0) * mu_range and
    sigma_j = softplus(out_1) + sigma_min. A zero-output network therefore
    peaks row j exactly at class j.
    """
    matrix = _as_matrix(stats)
    if net.out_width != 2:
        raise ShapeError(f"ordinal network must output width 2, got {net.out_width}")
    raw = net.forward(matrix)
    if not np.all(np.isfinite(raw)):
        raise NumericError("ordinal margin network produced non-finite outputs")
    c = matrix.shape[0]
    mu = np.arange(c, dtype=np.float64) + np.tanh(raw[:, 0]) * mu_range
    sigma = np.logaddexp(0.0, raw[:, 1]) + sigma_min
    k = np.arange(c, dtype=np.float64)
    table = m_max * np.exp(-((k[None, :] - mu[:, None]) ** 2) / (2.0 * sigma[:, None] ** 2))
    return OrdinalMargins(
        raw=raw, mu=mu, sigma=sigma, table=table,
        m_max=m_max, mu_range=mu_range, sigma_min=sigma_min,
    )


def ordinal_backward(net: DenseNet, margins: OrdinalMargins, d_table: np.ndarray) -> NetGradients:
    """Backprop a table gradient through the discretization into the network."""
    c = margins.table.shape[0]
    if d_table.shape != (c, c):
        raise ShapeError(f"d_table shape {d_table.shape} does not match table ({c}, {c})")
    k = np.arange(c, dtype=np.float64)
    diff = k[None, :] - margins.mu[:, None]
    sig = margins.sigma[:, None]
    d_mu = (d_table * margins.table * diff / sig**2).sum(axis=1)
    d_sigma = (d_table * margins.table * diff**2 / sig**3).sum(axis=1)
    tanh0 = np.tanh(margins.raw[:, 0])
    d_raw0 = d_mu * margins.mu_range * (1.0 - tanh0 * tanh0)
    d_raw1 = d_sigma / (1.0 + np.exp(-margins.raw[:, 1]))
    return net.backward(np.stack([d_raw0, d_raw1], axis=1))


def variational_forward(net: DenseNet, delta: np.ndarray, *, m_max: float) -> VariationalMargin:
    """Map a snapshot residual row-wise to one clamped signed margin per class."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.ndim != 2:
        raise ShapeError(f"residual must be 2-D, got {delta.ndim}-D")
    if net.out_width != 1:
        raise ShapeError(f"variational network must output width 1, got {net.out_width}")
    out = net.forward(delta)
    if not np.all(np.isfinite(out)):
        raise NumericError("variational margin network produced non-finite outputs")
    pre = out[:, 0]
    return VariationalMargin(values=np.clip(pre, -m_max, m_max), pre_clamp=pre, m_max=m_max)


def variational_backward(
    net: DenseNet, margin: VariationalMargin, d_values: np.ndarray
) -> NetGradients:
    d_values = np.asarray(d_values, dtype=np.float64)
    if d_values.shape != margin.values.shape:
        raise ShapeError("d_values shape does not match margin vector")
    inside = np.abs(margin.pre_clamp) < margin.m_max
    return net.backward((d_values * inside)[:, None])


def combine(
    ordinal: OrdinalMargins,
    variational: VariationalMargin,
    mix: MarginMix,
    true_class: int,
) -> np.ndarray:
    """Per-sample margin vector lambda * table[true_class] + beta * values."""
    c = ordinal.table.shape[0]
    j = int(true_class)
    if not 0 <= j < c:
        raise ShapeError(f"true class {j} out of range [0, {c - 1}]")
    return mix.lam * ordinal.table[j] + mix.beta * variational.values


def combine_batch(
    ordinal: OrdinalMargins,
    variational: VariationalMargin,
    mix: MarginMix,
    true_classes: np.ndarray,
) -> np.ndarray:
    """Stack combine() over a vector of true classes into a (batch, c) matrix."""
    idx = np.asarray(true_classes, dtype=np.int64)
    c = ordinal.table.shape[0]
    if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= c):
        raise ShapeError("true class indices out of range")
    return mix.lam * ordinal.table[idx] + mix.beta * variational.values[None, :]

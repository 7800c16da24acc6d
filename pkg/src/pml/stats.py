"""Streaming per-class statistics over embedding vectors.

The bank keeps, for each of c classes: the running center (single-pass
mean recursion), a Welford-style intra-class accumulator built from the
product of two cosine distances d(x, center_before) * d(x, center_after),
and a count. The inter-class profile is the cosine distance from each
center to every other center. A snapshot concatenates all three into one
c x (D + 1 + c) matrix with a fixed column layout:

    columns 0..D-1   center
    column  D        intra-class variance (accumulator / max(count, 1))
    columns D+1..D+c inter-class distance row

Updates are order-dependent recursions and must be applied sequentially;
snapshots are immutable and freely shareable. No gradient ever flows into
the bank: callers feed it detached feature values.

Centers of classes that have not received a sample stay at the zero
vector; cosine distances against a zero-norm vector are taken as 0 and a
warning counter records how often that convention fired.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ShapeError


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos(a, b), clipped to [0, 2]; 0 by convention if either norm is 0."""
    # pre-scaling by the max magnitude keeps the norms from overflowing
    am = np.abs(a).max(initial=0.0)
    bm = np.abs(b).max(initial=0.0)
    if am == 0.0 or bm == 0.0:
        return 0.0
    a = a / am
    b = b / bm
    return float(np.clip(1.0 - (a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)), 0.0, 2.0))


@dataclass(frozen=True)
class StatsSnapshot:
    """Immutable c x (D+1+c) view [centers | intra | inter] of a bank state."""

    matrix: np.ndarray
    tag: int | str

    @property
    def num_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1] - 1 - self.matrix.shape[0]

    @classmethod
    def zeros(cls, num_classes: int, dim: int, tag: int | str = 0) -> "StatsSnapshot":
        matrix = np.zeros((num_classes, dim + 1 + num_classes))
        matrix.setflags(write=False)
        return cls(matrix=matrix, tag=tag)


def residual(current: StatsSnapshot, reference: StatsSnapshot) -> np.ndarray:
    """Element-wise difference current - reference, preserving the column layout."""
    if current.matrix.shape != reference.matrix.shape:
        raise ShapeError(
            f"snapshot shapes differ: {current.matrix.shape} vs {reference.matrix.shape}"
        )
    return current.matrix - reference.matrix


class ClassStatsBank:
    def __init__(self, num_classes: int, dim: int):
        if num_classes < 1 or dim < 1:
            raise ShapeError(f"need num_classes >= 1 and dim >= 1, got {num_classes}, {dim}")
        self.num_classes = num_classes
        self.dim = dim
        self.centers = np.zeros((num_classes, dim))
        self.intra_accumulator = np.zeros(num_classes)
        self.counts = np.zeros(num_classes, dtype=np.int64)
        self.iteration = 0
        self.zero_norm_events = 0

    def _check_class(self, class_index: int) -> int:
        j = int(class_index)
        if not 0 <= j < self.num_classes:
            raise DataError(f"class index {j} out of range [0, {self.num_classes - 1}]")
        return j

    def _check_feature(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ShapeError(f"feature shape {x.shape} does not match bank dim ({self.dim},)")
        if not np.all(np.isfinite(x)):
            raise NumericError("feature vector has non-finite components; bank unchanged")
        return x

    def _cosine(self, a: np.ndarray, b: np.ndarray) -> float:
        if np.abs(a).max(initial=0.0) == 0.0 or np.abs(b).max(initial=0.0) == 0.0:
            self.zero_norm_events += 1
            return 0.0
        return cosine_distance(a, b)

    def update_center(self, class_index: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Single-pass mean update c_j += (x - c_j) / (N_j + 1).

        Returns (center_before, center_after) copies, the pair consumed by
        the intra-class update. Rejects non-finite features without
        touching the bank.
        """
        j = self._check_class(class_index)
        x = self._check_feature(x)
        before = self.centers[j].copy()
        self.centers[j] = before + (x - before) / (self.counts[j] + 1.0)
        self.counts[j] += 1
        return before, self.centers[j].copy()

    def update_intra(
        self,
        class_index: int,
        x: np.ndarray,
        center_before: np.ndarray,
        center_after: np.ndarray,
    ) -> None:
        """Accumulate d(x, center_before) * d(x, center_after) into class j.

        Requires that update_center for this same sample already ran (the
        recursion uses both the pre- and post-update center). Each
        increment is a product of two cosine distances in [0, 2], so the
        accumulator never decreases.
        """
        j = self._check_class(class_index)
        x = self._check_feature(x)
        d_before = self._cosine(x, np.asarray(center_before, dtype=np.float64))
        d_after = self._cosine(x, np.asarray(center_after, dtype=np.float64))
        self.intra_accumulator[j] += d_before * d_after

    def observe(self, class_index: int, x: np.ndarray) -> None:
        """Stream one sample: center update, then intra update, then tick the clock."""
        before, after = self.update_center(class_index, x)
        self.update_intra(class_index, x, before, after)
        self.iteration += 1

    @property
    def intra_variance(self) -> np.ndarray:
        """Accumulator normalized by max(count, 1); this form feeds the margin networks."""
        return self.intra_accumulator / np.maximum(self.counts, 1)

    def inter_variance(self, class_index: int) -> np.ndarray:
        """Cosine distances from center j to every center; entry j is exactly 0."""
        j = self._check_class(class_index)
        row = np.array([self._cosine(self.centers[j], self.centers[t])
                        for t in range(self.num_classes)])
        row[j] = 0.0
        return row

    def inter_matrix(self) -> np.ndarray:
        """Full c x c cosine-distance matrix: symmetric, zero diagonal, entries in [0, 2]."""
        peak = np.abs(self.centers).max(axis=1)
        zero = peak == 0.0
        scaled = self.centers / np.where(zero, 1.0, peak)[:, None]
        norms = np.linalg.norm(scaled, axis=1)
        unit = scaled / np.where(zero, 1.0, norms)[:, None]
        dist = 1.0 - unit @ unit.T
        # zero-norm convention: every comparison involving such a center is 0
        if np.any(zero):
            pairs = int(zero.sum()) * (self.num_classes - 1) * 2 - int(zero.sum()) * (int(zero.sum()) - 1)
            self.zero_norm_events += pairs
            dist[zero, :] = 0.0
            dist[:, zero] = 0.0
        np.fill_diagonal(dist, 0.0)
        return np.clip(dist, 0.0, 2.0)

    def snapshot(self, tag: int | str | None = None) -> StatsSnapshot:
        matrix = np.hstack(
            [self.centers, self.intra_variance[:, None], self.inter_matrix()]
        )
        matrix.setflags(write=False)
        return StatsSnapshot(matrix=matrix, tag=self.iteration if tag is None else tag)

    def export_csv(self, path) -> None:
        """One row per class: class, count, center components, intra variance, inter row."""
        intra = self.intra_variance
        inter = self.inter_matrix()
        header = (
            ["class", "count"]
            + [f"center_{i}" for i in range(self.dim)]
            + ["intra_variance"]
            + [f"inter_{t}" for t in range(self.num_classes)]
        )
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for j in range(self.num_classes):
                row = (
                    [str(j), str(int(self.counts[j]))]
                    + [repr(float(v)) for v in self.centers[j]]
                    + [repr(float(intra[j]))]
                    + [repr(float(v)) for v in inter[j]]
                )
                fh.write(",".join(row) + "\n")

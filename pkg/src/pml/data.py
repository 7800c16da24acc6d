"""Synthetic long-tailed ordinal datasets and the CSV interchange format.

Samples are feature vectors, not images: every downstream computation in
this package consumes embeddings, so the generator produces class-shaped
point clouds directly. True class centers sit on a circular arc embedded
in R^D, which makes adjacent classes nearest neighbors (verified at
generation). Class sizes follow a power law ceil(n_max * (rank+1)^-gamma)
with the most populous ranks placed mid-range on the label axis, mimicking
adult-heavy age corpora.

CSV format (UTF-8, LF, header required):

    age,sigma,f_0,...,f_{D-1}

`age` is the integer class label, `sigma` the per-sample annotated
deviation used by the epsilon metric, and floats are written with repr()
so a round trip through text is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class OrdinalDatasetSpec:
    num_classes: int = 20
    dim: int = 8
    tail_exponent: float = 1.5
    n_max: int = 200
    noise_sigma: float = 0.3
    annotated_sigma: float = 3.0
    arc_radius: float = 3.0
    arc_span: float = 0.8 * math.pi
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 3:
            raise ConfigError(f"need at least 3 classes, got {self.num_classes}")
        if self.dim < 2:
            raise ConfigError(f"need feature dimension >= 2, got {self.dim}")
        if self.n_max < 10:
            raise ConfigError(f"need n_max >= 10, got {self.n_max}")
        if self.tail_exponent < 0.0:
            raise ConfigError(f"tail exponent must be >= 0, got {self.tail_exponent}")
        if self.noise_sigma < 0.0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if self.annotated_sigma <= 0.0:
            raise ConfigError(f"annotated sigma must be > 0, got {self.annotated_sigma}")
        if self.arc_radius <= 0.0 or not 0.0 < self.arc_span <= math.pi:
            raise ConfigError("arc radius must be > 0 and arc span in (0, pi]")


@dataclass
class Dataset:
    features: np.ndarray  # (n, D)
    ages: np.ndarray      # (n,) integer class labels
    sigmas: np.ndarray    # (n,) annotated deviations
    num_classes: int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.ages = np.asarray(self.ages, dtype=np.int64)
        self.sigmas = np.asarray(self.sigmas, dtype=np.float64)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.ages, minlength=self.num_classes)

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx].copy(), self.ages[idx].copy(),
            self.sigmas[idx].copy(), self.num_classes,
        )


@dataclass
class DatasetBundle:
    """Train/validation/test views of one dataset, plus the index arrays."""

    data: Dataset
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray
    train: Dataset = field(init=False)
    val: Dataset = field(init=False)
    test: Dataset = field(init=False)

    def __post_init__(self) -> None:
        self.train = self.data.subset(self.train_indices)
        self.val = self.data.subset(self.val_indices)
        self.test = self.data.subset(self.test_indices)


def head_biased_order(num_classes: int) -> list[int]:
    """Class indices ordered by closeness to the middle of the label axis."""
    mid = (num_classes - 1) / 2.0
    return sorted(range(num_classes), key=lambda j: (abs(j - mid), j))


def class_sizes(spec: OrdinalDatasetSpec) -> np.ndarray:
    """Per-class-index sample counts under the power law and the head-biased ranks."""
    counts = np.zeros(spec.num_classes, dtype=np.int64)
    for rank, j in enumerate(head_biased_order(spec.num_classes)):
        value = spec.n_max * float(rank + 1) ** (-spec.tail_exponent)
        # nudge guards against a float product landing just above an integer
        counts[j] = max(1, math.ceil(value - 1e-9))
    return counts


def _arc_centers(spec: OrdinalDatasetSpec, rng: np.random.Generator) -> np.ndarray:
    frame = np.linalg.qr(rng.standard_normal((spec.dim, 2)))[0]
    theta = spec.arc_span * np.arange(spec.num_classes) / (spec.num_classes - 1)
    return spec.arc_radius * (
        np.cos(theta)[:, None] * frame[:, 0] + np.sin(theta)[:, None] * frame[:, 1]
    )


def _check_ordinal_geometry(centers: np.ndarray) -> None:
    c = centers.shape[0]
    dist = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
    adjacent = np.array([dist[j, j + 1] for j in range(c - 1)])
    mask = np.abs(np.subtract.outer(np.arange(c), np.arange(c))) >= 2
    if adjacent.max() >= dist[mask].min():
        raise ConfigError("generated centers violate the ordinal geometry invariant")


def generate(spec: OrdinalDatasetSpec) -> DatasetBundle:
    """Deterministic synthetic dataset with stratified 70/15/15 splits."""
    spec.validate()
    frame_ss, sample_ss, split_ss = np.random.SeedSequence(spec.seed).spawn(3)
    counts = class_sizes(spec)
    centers = _arc_centers(spec, np.random.default_rng(frame_ss))
    _check_ordinal_geometry(centers)
    sample_rng = np.random.default_rng(sample_ss)
    feats = []
    ages = []
    for j in range(spec.num_classes):
        n = int(counts[j])
        feats.append(centers[j] + spec.noise_sigma * sample_rng.standard_normal((n, spec.dim)))
        ages.append(np.full(n, j, dtype=np.int64))
    dataset = Dataset(
        np.vstack(feats), np.concatenate(ages),
        np.full(int(counts.sum()), spec.annotated_sigma), spec.num_classes,
    )
    return split_dataset(dataset, split_ss)


def split_dataset(dataset: Dataset, seed) -> DatasetBundle:
    """Stratified 70/15/15 split; classes with fewer than 3 samples go fully to train.

    Classes with at least 3 samples land at least one sample in each
    split, so tail classes stay visible to validation and test metrics.
    """
    rng = np.random.default_rng(seed)
    train_parts, val_parts, test_parts = [], [], []
    for j in range(dataset.num_classes):
        pool = rng.permutation(np.flatnonzero(dataset.ages == j))
        n = pool.size
        if n == 0:
            continue
        if n < 3:
            train_parts.append(pool)
            continue
        n_val = max(1, int(0.15 * n))
        n_test = max(1, int(0.15 * n))
        val_parts.append(pool[:n_val])
        test_parts.append(pool[n_val:n_val + n_test])
        train_parts.append(pool[n_val + n_test:])
    empty = np.empty(0, dtype=np.int64)
    return DatasetBundle(
        data=dataset,
        train_indices=np.sort(np.concatenate(train_parts)) if train_parts else empty,
        val_indices=np.sort(np.concatenate(val_parts)) if val_parts else empty,
        test_indices=np.sort(np.concatenate(test_parts)) if test_parts else empty,
    )


def save_csv(dataset: Dataset, path) -> None:
    header = "age,sigma," + ",".join(f"f_{i}" for i in range(dataset.dim))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for age, sigma, row in zip(dataset.ages, dataset.sigmas, dataset.features):
            fh.write(
                f"{int(age)},{repr(float(sigma))},"
                + ",".join(repr(float(v)) for v in row) + "\n"
            )


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Parse the interchange format; malformed rows fail with their line number."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split(",")
    if len(header) < 3 or header[0] != "age" or header[1] != "sigma":
        raise DataError(f"{path}: header must be 'age,sigma,f_0,...', got '{lines[0]}'")
    dim = len(header) - 2
    if header[2:] != [f"f_{i}" for i in range(dim)]:
        raise DataError(f"{path}: feature columns must be named f_0..f_{dim - 1}")
    if len(lines) == 1:
        raise DataError(f"{path}: no samples after the header")

    ages, sigmas, feats = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != dim + 2:
            raise DataError(
                f"{path} line {lineno}: expected {dim + 2} fields, got {len(fields)}"
            )
        try:
            age = int(fields[0])
            sigma = float(fields[1])
            row = [float(v) for v in fields[2:]]
        except ValueError as exc:
            raise DataError(f"{path} line {lineno}: {exc}") from exc
        if age < 0:
            raise DataError(f"{path} line {lineno}: negative age {age}")
        if num_classes is not None and age >= num_classes:
            raise DataError(
                f"{path} line {lineno}: age {age} outside [0, {num_classes - 1}]"
            )
        if sigma <= 0.0 or not math.isfinite(sigma):
            raise DataError(f"{path} line {lineno}: sigma must be positive, got {sigma}")
        if not all(math.isfinite(v) for v in row):
            raise DataError(f"{path} line {lineno}: non-finite feature value")
        ages.append(age)
        sigmas.append(sigma)
        feats.append(row)
    inferred = max(ages) + 1 if num_classes is None else num_classes
    return Dataset(np.array(feats), np.array(ages), np.array(sigmas), inferred)

"""Nested balanced-to-imbalanced curricula and stage control.

Classes are ranked by ascending training count (ties broken by class
index). Stage i keeps every sample of the classes ranked at or below the
dividing rank delta_i and caps every higher-ranked class at the count of
the rank-delta_i class. Because the dividing ranks and caps are
nondecreasing, and each class draws its retained samples as a prefix of
one fixed seeded permutation, the stages form a nested chain ending at
the full training set, with a nondecreasing imbalance ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, StateError
from .stats import StatsSnapshot, residual

CONTINUE = "continue"
ADVANCE = "advance"
FINISH = "finish"

DEFAULT_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


def _check_fractions(fractions: Sequence[float]) -> tuple[float, ...]:
    fr = tuple(float(f) for f in fractions)
    if not fr:
        raise ConfigError("need at least one curriculum fraction")
    if any(not 0.0 < f <= 1.0 for f in fr):
        raise ConfigError(f"fractions must lie in (0, 1], got {fr}")
    if any(b <= a for a, b in zip(fr, fr[1:])):
        raise ConfigError(f"fractions must be strictly ascending, got {fr}")
    if fr[-1] != 1.0:
        raise ConfigError(f"last fraction must be 1.0 so the final stage is the full set, got {fr[-1]}")
    return fr


@dataclass(frozen=True)
class CurriculumPlan:
    fractions: tuple[float, ...]
    class_counts: np.ndarray        # (c,) original per-class counts
    class_order: np.ndarray         # (c,) rank -> class index, ascending count
    ranks: np.ndarray               # (c,) class index -> rank
    dividing_ranks: tuple[int, ...]
    retained: np.ndarray            # (stages, c) retained count per class
    members: tuple[tuple[np.ndarray, ...], ...]  # [stage][class] class-local indices
    seed: int

    @property
    def num_stages(self) -> int:
        return len(self.fractions)

    @property
    def num_classes(self) -> int:
        return len(self.class_counts)

    def imbalance_ratio(self, stage: int) -> float:
        """Max retained count over min nonzero retained count; 0.0 for an empty stage."""
        row = self.retained[stage]
        nonzero = row[row > 0]
        if nonzero.size == 0:
            return 0.0
        return float(row.max() / nonzero.min())

    def stage_members(self, stage: int, class_index: int) -> np.ndarray:
        return self.members[stage][class_index]

    def export_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("stage,class,rank,retained_count,original_count,imbalance_ratio\n")
            for i in range(self.num_stages):
                ratio = repr(self.imbalance_ratio(i))
                for j in range(self.num_classes):
                    fh.write(
                        f"{i + 1},{j},{int(self.ranks[j])},{int(self.retained[i, j])},"
                        f"{int(self.class_counts[j])},{ratio}\n"
                    )


def build_plan(
    class_counts: Sequence[int],
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> CurriculumPlan:
    """Construct the nested stage plan for the given per-class counts.

    Empty classes are allowed and simply contribute nothing. Dividing
    ranks come from ceil(fraction * c) - 1, so the final fraction of 1.0
    always covers every class.
    """
    counts = np.asarray(class_counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise ConfigError("class_counts must be a non-empty 1-D sequence")
    if np.any(counts < 0):
        raise ConfigError("class counts must be nonnegative")
    if counts.sum() <= 0:
        raise ConfigError("at least one class must have samples")
    fr = _check_fractions(fractions)
    c = counts.size

    order = np.lexsort((np.arange(c), counts))  # ascending count, ties by index
    ranks = np.empty(c, dtype=np.int64)
    ranks[order] = np.arange(c)
    # small nudge guards against fraction * c rounding just above an integer
    dividing = tuple(int(math.ceil(f * c - 1e-9)) - 1 for f in fr)

    retained = np.zeros((len(fr), c), dtype=np.int64)
    for i, delta in enumerate(dividing):
        cap = counts[order[delta]]
        for j in range(c):
            retained[i, j] = counts[j] if ranks[j] <= delta else min(counts[j], cap)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    perms = [rng.permutation(int(n)) for n in counts]
    members = tuple(
        tuple(np.sort(perms[j][: retained[i, j]]) for j in range(c))
        for i in range(len(fr))
    )
    return CurriculumPlan(
        fractions=fr,
        class_counts=counts,
        class_order=order,
        ranks=ranks,
        dividing_ranks=dividing,
        retained=retained,
        members=members,
        seed=int(seed),
    )


@dataclass
class InstructorState:
    """Reference snapshot carried across curriculum stages.

    Stage 1 has no instructor: its variational reference is the previous
    iteration's snapshot. From stage 2 on, the reference is the snapshot
    frozen when the previous stage converged.
    """

    stage_index: int = 0
    v_pre: StatsSnapshot | None = None

    def freeze(self, snapshot: StatsSnapshot) -> None:
        self.v_pre = snapshot


def stage_reference(
    instructor: InstructorState,
    current: StatsSnapshot,
    previous_iteration: StatsSnapshot,
) -> np.ndarray:
    """Residual matrix feeding the variational margin network."""
    if instructor.stage_index == 0:
        return residual(current, previous_iteration)
    if instructor.v_pre is None:
        raise StateError(
            f"stage {instructor.stage_index + 1} requires a frozen instructor snapshot"
        )
    return residual(current, instructor.v_pre)


@dataclass
class StageState:
    stage_index: int
    num_stages: int
    epoch_budget: int
    patience: int
    min_delta: float = 1e-3


def advance(state: StageState, validation_history: Sequence[float]) -> str:
    """Decide whether the current stage continues, advances, or finishes training.

    The stage moves on once the validation MAE shows no net improvement
    greater than min_delta across the last `patience` epochs (so a flat
    history of exactly `patience` epochs advances), or once the epoch
    budget is exhausted. The final stage finishes instead of advancing.
    """
    if state.epoch_budget < 1 or state.patience < 1:
        raise ConfigError("epoch_budget and patience must be >= 1")
    epochs = len(validation_history)
    if epochs == 0:
        return CONTINUE
    plateau = epochs >= state.epoch_budget
    if not plateau and epochs >= state.patience:
        window = list(validation_history[-state.patience:])
        if state.patience == 1:
            plateau = True
        else:
            plateau = min(window[1:]) > window[0] - state.min_delta
    if not plateau:
        return CONTINUE
    return FINISH if state.stage_index >= state.num_stages - 1 else ADVANCE

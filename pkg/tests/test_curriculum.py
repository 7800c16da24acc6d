import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pml.curriculum import (
    ADVANCE,
    CONTINUE,
    FINISH,
    InstructorState,
    StageState,
    advance,
    build_plan,
    stage_reference,
)
from pml.errors import ConfigError, StateError
from pml.stats import ClassStatsBank, StatsSnapshot


def oracle_retained(counts, fractions):
    """Literal re-implementation of the cap rule for cross-checking."""
    c = len(counts)
    order = sorted(range(c), key=lambda j: (counts[j], j))
    rank = {j: r for r, j in enumerate(order)}
    out = []
    for f in fractions:
        delta = int(np.ceil(f * c - 1e-9)) - 1
        cap = counts[order[delta]]
        out.append([counts[j] if rank[j] <= delta else min(counts[j], cap)
                    for j in range(c)])
    return np.array(out)


def test_worked_example_counts_and_ratios():
    plan = build_plan([10, 20, 40, 80], (0.25, 0.5, 0.75, 1.0), seed=0)
    assert np.array_equal(plan.retained[0], [10, 10, 10, 10])
    assert np.array_equal(plan.retained[1], [10, 20, 20, 20])
    assert np.array_equal(plan.retained[2], [10, 20, 40, 40])
    assert np.array_equal(plan.retained[3], [10, 20, 40, 80])
    assert [plan.imbalance_ratio(i) for i in range(4)] == [1.0, 2.0, 4.0, 8.0]


def test_equal_counts_every_stage_is_the_full_set():
    plan = build_plan([30, 30, 30], (0.4, 1.0), seed=1)
    for i in range(2):
        assert np.array_equal(plan.retained[i], [30, 30, 30])
        for j in range(3):
            assert plan.stage_members(i, j).size == 30


def test_single_stage_full_dataset():
    plan = build_plan([5, 9, 2], (1.0,), seed=2)
    assert np.array_equal(plan.retained[0], [5, 9, 2])


def test_members_are_nested_prefixes_of_one_permutation():
    plan = build_plan([50, 10, 30, 70], seed=3)
    for j in range(4):
        for i in range(plan.num_stages - 1):
            small = set(plan.stage_members(i, j).tolist())
            large = set(plan.stage_members(i + 1, j).tolist())
            assert small <= large
        final = plan.stage_members(plan.num_stages - 1, j)
        assert np.array_equal(np.sort(final), np.arange(plan.class_counts[j]))


def test_determinism_same_seed_same_plan():
    a = build_plan([12, 7, 30, 4, 18], seed=11)
    b = build_plan([12, 7, 30, 4, 18], seed=11)
    for i in range(a.num_stages):
        for j in range(5):
            assert np.array_equal(a.stage_members(i, j), b.stage_members(i, j))
    c = build_plan([12, 7, 30, 4, 18], seed=12)
    assert any(
        not np.array_equal(a.stage_members(0, j), c.stage_members(0, j))
        for j in range(5)
        if a.stage_members(0, j).size
    )


def test_tie_break_by_class_index():
    plan = build_plan([5, 5, 5], (1.0 / 3.0, 2.0 / 3.0, 1.0), seed=0)
    assert np.array_equal(plan.class_order, [0, 1, 2])


def test_empty_classes_allowed():
    plan = build_plan([0, 10, 20], (1.0 / 3.0, 2.0 / 3.0, 1.0), seed=0)
    assert plan.retained[0].sum() == 0  # cap class is the empty one
    assert np.array_equal(plan.retained[1], [0, 10, 10])
    assert np.array_equal(plan.retained[2], [0, 10, 20])
    assert plan.imbalance_ratio(0) == 0.0
    assert plan.imbalance_ratio(1) == 1.0
    assert plan.imbalance_ratio(2) == 2.0


def test_fraction_validation():
    with pytest.raises(ConfigError):
        build_plan([5, 5], (0.5, 0.4, 1.0), seed=0)
    with pytest.raises(ConfigError):
        build_plan([5, 5], (0.5, 0.9), seed=0)
    with pytest.raises(ConfigError):
        build_plan([0, 0], (1.0,), seed=0)


@given(
    counts=st.lists(st.integers(0, 200), min_size=2, max_size=25).filter(lambda c: sum(c) > 0),
    n_stages=st.integers(2, 6),
    seed=st.integers(0, 1000),
)
@settings(max_examples=120, deadline=None)
def test_plan_invariants_hold_for_random_counts(counts, n_stages, seed):
    fractions = tuple((i + 1) / n_stages for i in range(n_stages))
    plan = build_plan(counts, fractions, seed=seed)
    assert np.array_equal(plan.retained, oracle_retained(counts, fractions))
    ratios = [plan.imbalance_ratio(i) for i in range(n_stages)]
    assert all(a <= b + 1e-12 for a, b in zip(ratios, ratios[1:]))
    for j in range(len(counts)):
        for i in range(n_stages - 1):
            assert set(plan.stage_members(i, j).tolist()) <= set(
                plan.stage_members(i + 1, j).tolist()
            )
    assert np.array_equal(plan.retained[-1], counts)


def make_snapshot(value: float, c: int = 3, d: int = 2) -> StatsSnapshot:
    m = np.full((c, d + 1 + c), value)
    m.setflags(write=False)
    return StatsSnapshot(matrix=m, tag=value)


def test_stage_one_reference_is_previous_iteration():
    inst = InstructorState(stage_index=0, v_pre=None)
    cur, prev = make_snapshot(3.0), make_snapshot(1.0)
    assert np.allclose(stage_reference(inst, cur, prev), 2.0)
    zero = StatsSnapshot.zeros(3, 2)
    assert np.allclose(stage_reference(inst, cur, zero), cur.matrix)


def test_later_stage_reference_is_the_frozen_instructor():
    inst = InstructorState(stage_index=1, v_pre=make_snapshot(2.0))
    cur, prev = make_snapshot(3.0), make_snapshot(0.0)
    assert np.allclose(stage_reference(inst, cur, prev), 1.0)
    # fixed point: current equal to the instructor gives a zero residual
    assert np.allclose(stage_reference(inst, make_snapshot(2.0), prev), 0.0)


def test_missing_instructor_is_a_state_error():
    inst = InstructorState(stage_index=2, v_pre=None)
    with pytest.raises(StateError):
        stage_reference(inst, make_snapshot(1.0), make_snapshot(0.0))


def test_stage_reference_matches_csv_diff_oracle(tmp_path):
    # two-stage script: freeze after a first burst of samples, stream more,
    # then compare the residual against a diff of text-exported snapshots
    rng = np.random.default_rng(31)
    bank = ClassStatsBank(4, 3)
    for _ in range(30):
        bank.observe(int(rng.integers(0, 4)), rng.standard_normal(3))
    inst = InstructorState(stage_index=0)
    inst.freeze(bank.snapshot(tag="stage-1"))
    inst.stage_index = 1
    for _ in range(25):
        bank.observe(int(rng.integers(0, 4)), rng.standard_normal(3))
    current = bank.snapshot(tag="stage-2")

    def export(snap, name):
        path = tmp_path / name
        with open(path, "w") as fh:
            for row in snap.matrix:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        return path

    a = np.loadtxt(export(inst.v_pre, "pre.csv"), delimiter=",")
    b = np.loadtxt(export(current, "cur.csv"), delimiter=",")
    residual_matrix = stage_reference(inst, current, StatsSnapshot.zeros(4, 3))
    assert np.array_equal(residual_matrix, b - a)


def test_instructor_freeze_from_bank():
    bank = ClassStatsBank(3, 2)
    bank.observe(0, np.array([1.0, 0.0]))
    inst = InstructorState(stage_index=0)
    inst.freeze(bank.snapshot(tag="stage-1"))
    assert inst.v_pre is not None and inst.v_pre.tag == "stage-1"


def state(stage=0, stages=5, budget=50, patience=5):
    return StageState(stage_index=stage, num_stages=stages,
                      epoch_budget=budget, patience=patience)


def test_improving_history_shorter_than_patience_continues():
    assert advance(state(), [5.0, 4.0, 3.0]) == CONTINUE


def test_flat_history_of_length_patience_advances():
    assert advance(state(), [2.0] * 5) == ADVANCE


def test_budget_dominates():
    assert advance(state(budget=1), [9.0]) == ADVANCE
    assert advance(state(stage=4, budget=1), [9.0]) == FINISH


def test_slow_but_real_improvement_continues():
    history = [5.0, 4.0, 3.0, 2.0, 1.0]
    assert advance(state(), history) == CONTINUE


def test_plateau_after_improvement_advances():
    history = [5.0, 4.0, 3.0, 3.0, 3.0, 3.0, 3.0]
    assert advance(state(), history) == ADVANCE


def test_final_stage_finishes():
    assert advance(state(stage=4), [1.0] * 5) == FINISH


def test_empty_history_continues():
    assert advance(state(), []) == CONTINUE


def test_export_csv(tmp_path):
    plan = build_plan([10, 20, 40, 80], (0.25, 0.5, 0.75, 1.0), seed=0)
    path = tmp_path / "plan.csv"
    plan.export_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "stage,class,rank,retained_count,original_count,imbalance_ratio"
    assert len(lines) == 1 + 4 * 4
    assert lines[1] == "1,0,0,10,10,1.0"

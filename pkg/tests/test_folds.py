import pytest
from hypothesis import given
from hypothesis import strategies as st

from sleepstage.training import FoldPlan, assert_disjoint, make_folds


def ids(n):
    return [f"s{i:03d}" for i in range(n)]


def test_one_subject_per_fold():
    plan = make_folds(ids(20), 20, seed=0)
    assert plan.sizes() == [1] * 20


def test_hundred_subjects_twenty_folds():
    assert make_folds(ids(100), 20, seed=3).sizes() == [5] * 20


def test_same_seed_same_plan():
    assert make_folds(ids(17), 4, 9) == make_folds(ids(17), 4, 9)
    assert make_folds(ids(17), 4, 9) != make_folds(ids(17), 4, 10)


def test_input_order_does_not_matter():
    assert make_folds(ids(12), 3, 1) == make_folds(ids(12)[::-1], 3, 1)


@given(st.integers(2, 60), st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_partition_and_balance(n, k, seed):
    if n < k:
        with pytest.raises(ValueError, match="k <="):
            make_folds(ids(n), k, seed)
        return
    plan = make_folds(ids(n), k, seed)
    sizes = plan.sizes()
    assert max(sizes) - min(sizes) <= 1
    tests = [s for f in range(k) for s in plan.test_subjects(f)]
    assert sorted(tests) == ids(n)
    for f in range(k):
        assert not set(plan.test_subjects(f)) & set(plan.train_subjects(f))


def test_errors():
    with pytest.raises(ValueError, match="duplicate"):
        make_folds(["a", "a", "b"], 2, 0)
    with pytest.raises(ValueError, match="at least 2"):
        make_folds(ids(5), 1, 0)
    with pytest.raises(ValueError, match="unbalanced"):
        FoldPlan(2, {"a": 0, "b": 0, "c": 0})


def test_dict_round_trip():
    plan = make_folds(ids(9), 3, 5)
    assert FoldPlan.from_dict(plan.to_dict()) == plan


def test_assert_disjoint():
    assert_disjoint(["a"], ["b"])
    with pytest.raises(AssertionError, match="'b'"):
        assert_disjoint(["a", "b"], ["b"])

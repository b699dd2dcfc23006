import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirrorfdr.metrics import aggregate_scores, score_selection, summarize


def test_counting_example():
    s = score_selection({1, 2, 4}, {1, 2, 3}, 10)
    assert s.fdp == pytest.approx(1 / 3)
    assert s.tpr == pytest.approx(2 / 3)
    assert s.n_selected == 3 and s.n_true_active == 3


def test_empty_selection_guard():
    s = score_selection([], [0, 1], 5)
    assert s.fdp == 0.0 and s.tpr == 0.0


def test_perfect_selection():
    s = score_selection([3, 0], [0, 3], 5)
    assert (s.fdp, s.tpr) == (0.0, 1.0)


def test_empty_support_convention():
    assert score_selection([], [], 5).tpr == 1.0
    s = score_selection([2], [], 5)
    assert s.tpr == 0.0 and s.fdp == 1.0 and s.empty_support


def test_out_of_range():
    with pytest.raises(ValueError):
        score_selection([5], [0], 5)
    with pytest.raises(ValueError):
        score_selection([0], [-1], 5)


index_sets = st.sets(st.integers(0, 29), max_size=30)


@given(sel=index_sets, s1=index_sets, perm_seed=st.integers(0, 1000))
def test_permutation_invariance_and_precision_identity(sel, s1, perm_seed):
    p = 30
    s = score_selection(sel, s1, p)
    perm = np.random.default_rng(perm_seed).permutation(p)
    t = score_selection({perm[i] for i in sel}, {perm[i] for i in s1}, p)
    assert s == t
    assert 0 <= s.fdp <= 1 and 0 <= s.tpr <= 1
    if sel:
        assert len(sel & s1) / len(sel) == pytest.approx(1 - s.fdp)


def test_aggregate_single_and_triple():
    one = score_selection([1], [1, 2], 5)
    agg = aggregate_scores([one])
    assert agg["tpr"].mean == agg["tpr"].median == 0.5
    fdps = summarize([0.0, 0.5, 1.0])
    assert fdps.mean == 0.5 and fdps.median == 0.5


def test_aggregate_identical_scores_zero_iqr():
    s = score_selection([1, 2], [1], 5)
    agg = aggregate_scores([s] * 50)
    assert agg["fdp"].iqr == 0.0
    assert agg["fdp"].mcse == 0.0


def test_aggregate_empty():
    with pytest.raises(ValueError):
        aggregate_scores([])


def test_mcse():
    s = summarize([0.0, 1.0, 0.0, 1.0])
    assert s.mcse == pytest.approx(np.std([0, 1, 0, 1], ddof=1) / 2)

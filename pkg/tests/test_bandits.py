import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfba.bandits import (Slate, candidates, exploration_rate, predictive_spread, top_slate,
                          ts_select, ucb_scores, ucb_select)
from cfba.types import Gaussian

POST = Gaussian(np.array([1.0, 0.0]), np.diag([0.0001, 4.0]))
ITEMS = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])


def test_hand_computed_ucb_scores():
    # item 1 has mean 0 and std 2; item 0 has mean 1 and std 0.01
    scores = ucb_scores(POST, ITEMS, alpha_t=1.0)
    np.testing.assert_allclose(scores, [1.01, 2.0, 0.5 + np.sqrt(0.000025 + 1.0)])
    assert ucb_select(POST, ITEMS, 0.0).top == 0
    assert ucb_select(POST, ITEMS, 1.0).top == 1


def test_variance_bonus_switch():
    np.testing.assert_allclose(ucb_scores(POST, ITEMS, 1.0, "var"), [1.0001, 4.0, 0.5 + 1.000025])
    with pytest.raises(ValueError, match="'std' or 'var'"):
        ucb_scores(POST, ITEMS, 1.0, "iqr")


@pytest.mark.parametrize("t, schedule, expected", [
    (1, "log-t", 0.0),
    (10, "log-t", 2 * np.sqrt(np.log(10))),
    (9, "sqrt-t", 6.0),
    (7, "constant", 2.0),
])
def test_exploration_schedules(t, schedule, expected):
    assert exploration_rate(2.0, t, schedule) == pytest.approx(expected)


def test_exploration_rate_errors():
    with pytest.raises(ValueError, match="t must be >= 1"):
        exploration_rate(1.0, 0)
    with pytest.raises(ValueError, match="schedule must be one of"):
        exploration_rate(1.0, 2, "cubic")


def test_ties_go_to_lower_index():
    slate = top_slate(np.array([5, 2, 9, 1]), np.array([1.0, 3.0, 3.0, 1.0]), 3)
    assert slate.items.tolist() == [2, 9, 1]


def test_random_tie_break_uses_rng():
    idx, scores = np.arange(20), np.zeros(20)
    tops = {top_slate(idx, scores, 1, np.random.default_rng(s)).top for s in range(30)}
    assert len(tops) > 5


def test_exclusion_and_pair_input():
    slate = ucb_select(POST, ITEMS, 1.0, slate_size=2, exclude=[1])
    assert slate.items.tolist() == [2, 0]
    pairs = [(7, ITEMS[0]), (3, ITEMS[1])]
    assert ucb_select(POST, pairs, 1.0).top == 3
    with pytest.raises(ValueError, match="empty candidate set"):
        candidates(ITEMS, exclude=[0, 1, 2])


def test_slate_validation():
    with pytest.raises(ValueError, match="duplicate"):
        Slate([1, 1], [2.0, 1.0])
    with pytest.raises(ValueError, match="non-increasing"):
        Slate([1, 2], [1.0, 2.0])
    s = Slate([4, 2], [2.0, 1.0])
    assert 2 in s and 3 not in s and len(s) == 2


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="posterior dimension"):
        ts_select(POST, np.ones((3, 3)))


def test_thompson_is_seeded():
    a = ts_select(POST, ITEMS, 2, seed=3)
    b = ts_select(POST, ITEMS, 2, seed=3)
    assert a.items.tolist() == b.items.tolist()


def test_thompson_selection_frequencies():
    # item 0 wins when the draw of the second coordinate is below 1: Phi(0.5)
    wins = sum(ts_select(POST, ITEMS[:2], seed=s).top == 0 for s in range(4000))
    assert wins / 4000 == pytest.approx(0.6915, abs=0.025)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_spread_matches_quadratic_form(k, n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((k, k))
    cov = a @ a.T + 0.1 * np.eye(k)
    mat = rng.standard_normal((n, k))
    expected = [m @ cov @ m for m in mat]
    np.testing.assert_allclose(predictive_spread(cov, mat), expected, rtol=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=25),
       st.integers(1, 30))
def test_top_slate_is_sorted_prefix(values, size):
    scores = np.array(values)
    slate = top_slate(np.arange(scores.size), scores, size)
    assert len(slate) == min(size, scores.size)
    rest = np.setdiff1d(np.arange(scores.size), slate.items)
    if rest.size:
        assert scores[rest].max() <= slate.scores.min()

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixad.evaluation import GroundTruth, evaluate_run, hitrate, point_adjust, prf1


def point_adjust_oracle(pred, labels):
    pred = list(pred)
    i = 0
    while i < len(labels):
        if labels[i]:
            j = i
            while j < len(labels) and labels[j]:
                j += 1
            if any(pred[i:j]):
                pred[i:j] = [True] * (j - i)
            i = j
        else:
            i += 1
    return pred


def test_point_adjust_examples():
    labels = np.zeros(8, dtype=bool)
    labels[2:6] = True
    pred = np.zeros(8, dtype=bool)
    pred[3] = True
    assert np.flatnonzero(point_adjust(pred, labels)).tolist() == [2, 3, 4, 5]
    assert not point_adjust(np.zeros(8, dtype=bool), labels).any()


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 50).flatmap(lambda n: st.tuples(st.lists(st.booleans(), min_size=n, max_size=n),
                                                      st.lists(st.booleans(), min_size=n, max_size=n))))
def test_point_adjust_properties(pair):
    pred, labels = (np.array(v, dtype=bool) for v in pair)
    adj = point_adjust(pred, labels)
    assert adj.tolist() == point_adjust_oracle(pred.tolist(), labels.tolist())
    np.testing.assert_array_equal(adj[~labels], pred[~labels])
    assert prf1(adj, labels)[1] >= prf1(pred, labels)[1]
    assert prf1(adj, labels)[2] >= prf1(pred, labels)[2] - 1e-15


def test_prf1_examples():
    labels = np.array([1, 1, 0, 0, 1], dtype=bool)
    assert prf1(labels, labels) == (1.0, 1.0, 1.0)
    assert prf1(~labels, labels) == (0.0, 0.0, 0.0)
    labels = np.array([True] * 8 + [False] * 2)
    pred = np.ones(10, dtype=bool)
    p, r, f = prf1(pred, labels)
    assert (p, r) == (0.8, 1.0)
    assert f == pytest.approx(8 / 9)
    assert prf1(np.zeros(3, bool), np.zeros(3, bool)) == (0.0, 0.0, 0.0)


def test_hitrate_examples():
    truth = {0, 1, 2, 3}
    ranked = [0, 9, 1, 8, 2, 7, 6, 3, 4, 5]
    assert hitrate(ranked, truth, 150) == 0.75  # k = 6, top-6 holds 0, 1, 2
    assert hitrate([2, 1, 5, 0, 3], {1, 2}, 100) == 1.0
    assert hitrate(list(range(5)), {3, 4}, 150) == 0.0  # k = floor(3) = 3
    with pytest.raises(ValueError):
        hitrate([0, 1], set(), 100)


def test_hitrate_k_is_capped():
    assert hitrate([2, 0, 1], {0, 1, 2}, 150) == 1.0


def test_hitrate_random_ranking_monte_carlo():
    rng = np.random.default_rng(0)
    truth = set(range(5))
    vals = [hitrate(rng.permutation(20), truth, 100) for _ in range(10_000)]
    assert np.mean(vals) == pytest.approx(0.25, abs=0.02)


@settings(max_examples=100, deadline=None)
@given(st.permutations(list(range(8))), st.sets(st.integers(0, 7), min_size=1))
def test_hitrate_bounded_and_monotone(ranked, truth):
    a, b = hitrate(ranked, truth, 100), hitrate(ranked, truth, 150)
    assert 0.0 <= a <= b <= 1.0


def _truth():
    labels = np.zeros(20, dtype=bool)
    labels[4:8] = True
    labels[13:16] = True
    return GroundTruth(labels, [(4, 7, frozenset({1, 2})), (13, 15, frozenset({0}))])


def test_perfect_scores_reach_upper_bounds():
    truth = _truth()
    s = np.zeros((20, 3))
    s[4:8, 1] = [1, 3, 2, 4]
    s[4:8, 2] = [2, 6, 4, 8]
    s[4:8, 0] = [1, 1, 1, 2]
    s[13:16, 0] = [5, 6, 5]
    report = evaluate_run(s, s.max(axis=1), 0.5, truth)
    assert report["f1"] == 1.0
    assert report["hitrate100"] == 1.0 and report["hitrate150"] == 1.0
    assert report["missed_segments"] == 0


def test_missed_segments_score_zero():
    truth = _truth()
    s = np.zeros((20, 3))
    report = evaluate_run(s, s.max(axis=1), 0.5, truth)
    assert report["missed_segments"] == 2
    assert report["hitrate100"] == 0.0 and report["f1"] == 0.0
    assert all(e["anchor"] is None for e in report["per_segment"])


def test_hand_computed_walkthrough():
    truth = _truth()
    s = np.zeros((20, 3))
    # first segment: flagged at t=5 and t=6 only, the run is point adjusted to 4..7;
    # anchor is feature 0 (max 9), feature 2 tracks it, feature 1 is anti-aligned weakly
    s[4:8, 0] = [0, 9, 5, 0]
    s[4:8, 2] = [0, 2, 1, 0]
    s[4:8, 1] = [1, 0, 1, 1]
    # a false alarm at t=10
    s[10, 1] = 3
    agg = s.max(axis=1)
    report = evaluate_run(s, agg, 0.5, truth)
    # predictions after adjustment: 4..7 and 10 -> TP 4, FP 1, FN 3
    assert report["precision"] == pytest.approx(4 / 5)
    assert report["recall"] == pytest.approx(4 / 7)
    first, second = report["per_segment"]
    assert first["anchor"] == 0
    assert first["ranked"][:2] == [0, 2]
    # GT {1, 2}, k = 2: top-2 is [0, 2] -> one hit of two
    assert first["hitrate100"] == 0.5
    # k = 3 covers every feature
    assert first["hitrate150"] == 1.0
    assert not second["detected"]
    assert report["hitrate100"] == pytest.approx(0.25)
    assert report["hitrate150"] == pytest.approx(0.5)

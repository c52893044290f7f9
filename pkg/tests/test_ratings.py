from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mdaware.corpus import VoteRecord
from mdaware.ratings import (
    GPA_POINTS,
    EloConfig,
    EloRating,
    GpaResult,
    RatingTable,
    actual_score,
    bootstrap_ratings,
    expected_score,
    gpa_ranking,
    rank_points,
    replay,
    win_rate_matrix,
)


def vote(i: str, j: str, outcome: str, ts: int = 0, task: str = "t001") -> VoteRecord:
    return VoteRecord(task_id=task, model_i=i, model_j=j, outcome=outcome, ts=ts)


def test_expected_score_equal_is_half():
    assert expected_score(1000.0, 1000.0) == 0.5
    assert expected_score(0.0, 0.0) == 0.5


def test_expected_score_d_sized_gap():
    assert abs(expected_score(1400.0, 1000.0) - 10 / 11) < 1e-12
    assert abs(expected_score(1000.0, 1400.0) - 1 / 11) < 1e-12


def test_expected_score_rejects_non_finite():
    with pytest.raises(ValueError):
        expected_score(float("nan"), 1000.0)
    with pytest.raises(ValueError):
        expected_score(1000.0, float("inf"))


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-2000, 4000, allow_nan=False),
    st.floats(-2000, 4000, allow_nan=False),
)
def test_expected_score_complementary(s_i, s_j):
    assert abs(expected_score(s_i, s_j) + expected_score(s_j, s_i) - 1.0) < 1e-9


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-1000, 3000, allow_nan=False),
    st.floats(1e-3, 500, allow_nan=False),
    st.floats(-1000, 3000, allow_nan=False),
)
def test_expected_score_strictly_monotone(s_i, bump, s_j):
    assert expected_score(s_i + bump, s_j) > expected_score(s_i, s_j)


def test_actual_score_mapping():
    assert actual_score("W") == 1.0
    assert actual_score("L") == 0.0
    assert actual_score("T") == 0.5
    with pytest.raises(ValueError):
        actual_score("X")


def test_replay_single_win():
    table = replay([vote("a", "b", "W")])
    assert table["a"].rating == 1005.0
    assert table["b"].rating == 995.0
    assert table["a"].games == table["b"].games == 1


def test_replay_single_loss_and_tie():
    table = replay([vote("a", "b", "L")])
    assert (table["a"].rating, table["b"].rating) == (995.0, 1005.0)
    table = replay([vote("a", "b", "T")])
    assert table["a"].rating == table["b"].rating == 1000.0


def test_replay_second_step_uses_updated_ratings():
    table = replay([vote("a", "b", "W", ts=1), vote("a", "b", "W", ts=2)])
    expected = expected_score(1005.0, 995.0)
    assert table["a"].rating == 1005.0 + 10.0 * (1.0 - expected)
    assert table["b"].rating == 995.0 - 10.0 * (1.0 - expected)


SCRIPTED = [
    ("a", "b", "W"), ("b", "c", "W"), ("c", "a", "W"), ("a", "b", "T"),
    ("a", "c", "L"), ("b", "c", "L"), ("a", "b", "W"), ("c", "b", "T"),
    ("a", "c", "W"), ("b", "a", "W"), ("c", "a", "T"), ("b", "c", "W"),
    ("a", "b", "L"), ("c", "b", "W"), ("a", "c", "T"), ("b", "a", "L"),
    ("c", "a", "W"), ("a", "b", "W"), ("b", "c", "T"), ("c", "a", "L"),
]


def test_replay_scripted_twenty_votes():
    """Cross-check against a from-scratch replay loop written in the test."""
    votes = [vote(i, j, o, ts=n) for n, (i, j, o) in enumerate(SCRIPTED)]
    table = replay(votes)

    ratings = {"a": 1000.0, "b": 1000.0, "c": 1000.0}
    outcome_points = {"W": 1.0, "L": 0.0, "T": 0.5}
    for i, j, o in SCRIPTED:
        gap = (ratings[j] - ratings[i]) / 400.0
        expected = 1.0 / (1.0 + 10.0**gap)
        delta = 10.0 * (outcome_points[o] - expected)
        ratings[i] += delta
        ratings[j] -= delta
    for m in ratings:
        assert abs(table[m].rating - ratings[m]) < 1e-9
    assert table["a"].games + table["b"].games + table["c"].games == 40


def test_replay_orders_by_ts():
    shuffled = [
        vote("a", "b", "W", ts=3),
        vote("a", "b", "L", ts=1),
        vote("a", "b", "W", ts=2),
    ]
    ordered = sorted(shuffled, key=lambda v: v.ts)
    assert replay(shuffled).ratings() == replay(ordered).ratings()


def test_replay_equal_ts_keeps_input_order():
    # a loss then a win lands elsewhere than a win then a loss
    forward = replay([vote("a", "b", "L", ts=5), vote("a", "b", "W", ts=5)])
    backward = replay([vote("a", "b", "W", ts=5), vote("a", "b", "L", ts=5)])
    assert forward["a"].rating != backward["a"].rating


def test_replay_rejects_by_index():
    votes = [
        vote("a", "b", "W", ts=0),
        VoteRecord(task_id="t", model_i="a", model_j="a", outcome="W", ts=1),
        VoteRecord(task_id="t", model_i="a", model_j="b", outcome="white", ts=2),
        vote("b", "a", "T", ts=3),
    ]
    table = replay(votes)
    assert table.rejected == (1, 2)
    assert table["a"].games == 2


def test_replay_seeds_known_models():
    table = replay([vote("a", "b", "W")], models=["a", "b", "idle"])
    assert table["idle"].rating == 1000.0
    assert table["idle"].games == 0


def test_rating_table_sorts_by_rating_then_name():
    table = replay([vote("a", "b", "W", ts=0)], models=["z", "m"])
    assert table.models() == ["a", "m", "z", "b"]


votes_strategy = st.lists(
    st.builds(
        vote,
        st.sampled_from(["a", "b", "c"]),
        st.sampled_from(["d", "e"]),
        st.sampled_from(["W", "L", "T"]),
        st.integers(0, 50),
    ),
    min_size=1,
    max_size=30,
)


@settings(max_examples=150, deadline=None)
@given(votes_strategy)
def test_replay_conserves_total_rating(votes):
    table = replay(votes)
    total = sum(e.rating for e in table.entries.values())
    assert abs(total - 1000.0 * len(table.entries)) < 1e-9


@settings(max_examples=100, deadline=None)
@given(votes_strategy)
def test_winner_never_hurt_by_beating_last_place(votes):
    before = replay(votes)
    order = before.models()
    top, bottom = order[0], order[-1]
    if top == bottom:
        return
    last_ts = max(v.ts for v in votes) + 1
    after = replay(votes + [vote(top, bottom, "W", ts=last_ts)])
    assert after[top].rating >= before[top].rating


def test_bootstrap_requires_votes():
    with pytest.raises(ValueError, match="no votes"):
        bootstrap_ratings([])
    bad = [VoteRecord(task_id="t", model_i="a", model_j="a", outcome="W", ts=0)]
    with pytest.raises(ValueError, match="no votes"):
        bootstrap_ratings(bad)


def test_bootstrap_is_reproducible():
    votes = [vote(i, j, o, ts=n) for n, (i, j, o) in enumerate(SCRIPTED)]
    cfg = EloConfig(bootstrap_rounds=50, rng_seed=7)
    one = bootstrap_ratings(votes, cfg)
    two = bootstrap_ratings(votes, cfg)
    assert one.entries == two.entries


def test_bootstrap_seed_changes_result():
    votes = [vote(i, j, o, ts=n) for n, (i, j, o) in enumerate(SCRIPTED)]
    one = bootstrap_ratings(votes, EloConfig(bootstrap_rounds=50, rng_seed=1))
    two = bootstrap_ratings(votes, EloConfig(bootstrap_rounds=50, rng_seed=2))
    assert one.entries != two.entries


def test_bootstrap_single_vote_degenerates():
    # every resample of one vote is that vote, so all rounds agree
    table = bootstrap_ratings([vote("a", "b", "W")], EloConfig(bootstrap_rounds=10))
    assert table["a"].rating == 1005.0
    assert (table["a"].ci_low, table["a"].ci_high) == (1005.0, 1005.0)
    assert table["a"].games == 1


def test_bootstrap_interval_brackets_rating():
    votes = [vote(i, j, o, ts=n) for n, (i, j, o) in enumerate(SCRIPTED)]
    table = bootstrap_ratings(votes, EloConfig(bootstrap_rounds=100))
    for model in ("a", "b", "c"):
        entry = table[model]
        assert entry.ci_low <= entry.rating <= entry.ci_high


def test_nearest_rank_quantiles():
    from mdaware.ratings import _nearest_rank

    values = np.array([1.0, 2.0, 3.0, 4.0])
    assert _nearest_rank(values, 0.5) == 2.0
    assert _nearest_rank(values, 0.025) == 1.0
    assert _nearest_rank(values, 0.975) == 4.0
    assert _nearest_rank(np.array([9.0]), 0.5) == 9.0


def test_win_rate_matrix_counts():
    votes = [
        vote("a", "b", "W"),
        vote("a", "b", "W"),
        vote("b", "a", "L"),
        vote("a", "b", "L"),
    ]
    matrix = win_rate_matrix(votes)
    assert matrix.win_rate("a", "b") == 0.75
    assert matrix.win_rate("b", "a") == 0.25
    assert matrix.win_rate("a", "c") is None
    assert matrix.models() == ["a", "b"]


def test_win_rate_ties_count_half():
    matrix = win_rate_matrix([vote("a", "b", "T"), vote("a", "b", "W")])
    assert matrix.win_rate("a", "b") == 0.75


def test_win_rate_complement():
    votes = [vote(i, j, o, ts=n) for n, (i, j, o) in enumerate(SCRIPTED)]
    matrix = win_rate_matrix(votes)
    for i in ("a", "b", "c"):
        for j in ("a", "b", "c"):
            if i == j:
                continue
            rate = matrix.win_rate(i, j)
            assert rate is not None
            assert 0.0 <= rate <= 1.0
            assert rate + matrix.win_rate(j, i) == pytest.approx(1.0)


def test_average_win_rate_weighs_by_games():
    votes = [vote("a", "b", "W"), vote("a", "b", "W"), vote("a", "c", "L")]
    matrix = win_rate_matrix(votes)
    assert matrix.average_win_rate("a") == pytest.approx(2 / 3)
    assert matrix.average_win_rate("missing") is None


def test_rank_points_table():
    assert GPA_POINTS == (4.0, 3.7, 3.3, 3.0, 2.7, 2.3, 2.0, 1.7, 1.3)
    for rank, points in enumerate(GPA_POINTS, start=1):
        assert rank_points(rank) == points
    assert rank_points(10) == 1.0
    assert rank_points(99) == 1.0
    with pytest.raises(ValueError):
        rank_points(0)


def test_gpa_ranking_hand_case():
    scores = {
        "t1": {"a": 0.9, "b": 0.8, "c": 0.8},
        "t2": {"a": 0.5, "b": 0.6},
        "t3": {"a": 0.1},
    }
    result = gpa_ranking(scores)
    assert result.skipped_tasks == 1
    assert result.averages["a"] == pytest.approx((4.0 + 3.7) / 2)
    assert result.averages["b"] == pytest.approx((3.7 + 4.0) / 2)
    assert result.averages["c"] == pytest.approx(3.7)
    assert result.tasks_counted == {"a": 2, "b": 2, "c": 1}
    assert result.ranking() == ["a", "b", "c"]


def test_gpa_competition_ranking_skips_after_tie():
    # two tied at the top share rank 1; the third is rank 3, not 2
    result = gpa_ranking({"t": {"a": 0.9, "b": 0.9, "c": 0.1}})
    assert result.averages == {"a": 4.0, "b": 4.0, "c": 3.3}


score_tables = st.dictionaries(
    st.sampled_from(["t1", "t2", "t3", "t4"]),
    st.dictionaries(
        st.sampled_from(["a", "b", "c", "d"]),
        st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]),
        min_size=2,
        max_size=4,
    ),
    min_size=1,
    max_size=4,
)


@settings(max_examples=150, deadline=None)
@given(score_tables)
def test_gpa_invariant_under_monotone_rescale(scores):
    rescaled = {
        task: {m: math.exp(2.0 * v) for m, v in per_model.items()}
        for task, per_model in scores.items()
    }
    assert gpa_ranking(scores).averages == gpa_ranking(rescaled).averages


def test_estimator_fit_predict():
    est = EloRating(bootstrap_rounds=10)
    est.fit([vote("a", "b", "W")])
    assert est.ratings_ == {"a": 1005.0, "b": 995.0}
    out = est.predict([("a", "b"), ("b", "a")])
    assert out[0] == expected_score(1005.0, 995.0)
    assert out[0] + out[1] == pytest.approx(1.0)


def test_estimator_guards():
    est = EloRating(bootstrap_rounds=5)
    with pytest.raises(NotFittedError):
        est.predict([("a", "b")])
    est.fit([vote("a", "b", "W")])
    with pytest.raises(ValueError, match="unknown model"):
        est.predict([("a", "nobody")])


def test_estimator_is_cloneable():
    est = EloRating(k=32.0, bootstrap_rounds=5, random_state=3)
    params = clone(est).get_params()
    assert params["k"] == 32.0
    assert params["random_state"] == 3

"""Pairwise vote aggregation.

Sequential rating replay with bootstrap confidence intervals, win-rate
matrices, and a rank-points average that grades models on a 4.0 scale.
Votes come in as :class:`~mdaware.corpus.VoteRecord`; invalid ones are
rejected by index, never silently repaired.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import VoteRecord

logger = logging.getLogger(__name__)

_ACTUAL = {"W": 1.0, "L": 0.0, "T": 0.5}


@dataclass(frozen=True)
class EloConfig:
    base_rating: float = 1000.0
    d: float = 400.0
    k: float = 10.0
    bootstrap_rounds: int = 1000
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.d <= 0 or self.k <= 0:
            raise ValueError(f"d and k must be positive, got d={self.d} k={self.k}")
        if self.bootstrap_rounds < 1:
            raise ValueError(f"bootstrap_rounds must be at least 1, got {self.bootstrap_rounds}")


def expected_score(s_i: float, s_j: float, d: float = 400.0) -> float:
    """Win probability implied by the rating gap: q_i / (q_i + q_j) with
    q = 10**(s/d).  Complementary in its arguments."""
    if not (math.isfinite(s_i) and math.isfinite(s_j)):
        raise ValueError(f"ratings must be finite, got {s_i!r} and {s_j!r}")
    q_i = 10.0 ** (s_i / d)
    q_j = 10.0 ** (s_j / d)
    return q_i / (q_i + q_j)


def actual_score(outcome: str) -> float:
    """Realized score for model_i: W -> 1, L -> 0, T -> 0.5.

    model_j receives the complement."""
    try:
        return _ACTUAL[outcome]
    except KeyError:
        raise ValueError(f"unknown outcome {outcome!r}") from None


@dataclass(frozen=True)
class RatingEntry:
    rating: float
    games: int
    ci_low: float | None = None
    ci_high: float | None = None


@dataclass(frozen=True)
class RatingTable:
    """Per-model ratings plus the input indices of rejected votes."""

    entries: Mapping[str, RatingEntry]
    rejected: tuple[int, ...] = ()

    def __getitem__(self, model: str) -> RatingEntry:
        return self.entries[model]

    def __contains__(self, model: str) -> bool:
        return model in self.entries

    def models(self) -> list[str]:
        """Model names sorted by rating descending, name ascending."""
        return sorted(self.entries, key=lambda m: (-self.entries[m].rating, m))

    def ratings(self) -> dict[str, float]:
        return {m: e.rating for m, e in self.entries.items()}


def _partition_valid(votes: Sequence[VoteRecord]) -> tuple[list[VoteRecord], tuple[int, ...]]:
    valid: list[VoteRecord] = []
    rejected: list[int] = []
    for index, vote in enumerate(votes):
        if vote.outcome not in _ACTUAL or vote.model_i == vote.model_j:
            rejected.append(index)
        else:
            valid.append(vote)
    return valid, tuple(rejected)


def replay(
    votes: Iterable[VoteRecord],
    cfg: EloConfig = EloConfig(),
    models: Iterable[str] = (),
) -> RatingTable:
    """Apply the rating update vote by vote, in timestamp order.

    Every model starts at base_rating on first appearance; ``models`` seeds
    the table so zero-vote models still get an entry.  Each update moves
    the two participants by opposite amounts, so the total is conserved.
    """
    votes = list(votes)
    valid, rejected = _partition_valid(votes)
    ordered = sorted(valid, key=lambda v: v.ts)  # stable: equal ts keep ingestion order
    ratings: dict[str, float] = {m: cfg.base_rating for m in models}
    games: dict[str, int] = {m: 0 for m in ratings}
    for vote in ordered:
        for m in (vote.model_i, vote.model_j):
            if m not in ratings:
                ratings[m] = cfg.base_rating
                games[m] = 0
        expected = expected_score(ratings[vote.model_i], ratings[vote.model_j], cfg.d)
        delta = cfg.k * (actual_score(vote.outcome) - expected)
        ratings[vote.model_i] += delta
        ratings[vote.model_j] -= delta
        games[vote.model_i] += 1
        games[vote.model_j] += 1
    entries = {m: RatingEntry(ratings[m], games[m]) for m in ratings}
    return RatingTable(entries, rejected)


def _nearest_rank(sorted_values: np.ndarray, q: float) -> float:
    n = len(sorted_values)
    index = min(max(math.ceil(q * n) - 1, 0), n - 1)
    return float(sorted_values[index])


def bootstrap_ratings(
    votes: Iterable[VoteRecord],
    cfg: EloConfig = EloConfig(),
    models: Iterable[str] = (),
) -> RatingTable:
    """Resample the vote list with replacement and replay each resample.

    The reported rating is the nearest-rank median across rounds; the
    interval bounds are the 2.5% and 97.5% nearest-rank quantiles.  Game
    counts refer to the original votes.  Reproducible from rng_seed: each
    round draws from its own spawned seed, so results do not depend on
    scheduling.
    """
    votes = list(votes)
    valid, rejected = _partition_valid(votes)
    if not valid:
        raise ValueError("no votes")
    point = replay(votes, cfg, models)
    universe = sorted(point.entries)
    n = len(valid)
    samples = np.empty((cfg.bootstrap_rounds, len(universe)))
    children = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.bootstrap_rounds)
    for round_index, child in enumerate(children):
        rng = np.random.default_rng(child)
        picks = rng.integers(0, n, size=n)
        table = replay([valid[i] for i in picks], cfg, universe)
        samples[round_index] = [table.entries[m].rating for m in universe]
    entries = {}
    for column_index, model in enumerate(universe):
        column = np.sort(samples[:, column_index])
        entries[model] = RatingEntry(
            rating=_nearest_rank(column, 0.5),
            games=point.entries[model].games,
            ci_low=_nearest_rank(column, 0.025),
            ci_high=_nearest_rank(column, 0.975),
        )
    return RatingTable(entries, rejected)


@dataclass(frozen=True)
class PairStats:
    wins: int
    losses: int
    ties: int

    @property
    def games(self) -> int:
        return self.wins + self.losses + self.ties

    @property
    def win_rate(self) -> float:
        return (self.wins + 0.5 * self.ties) / self.games


@dataclass(frozen=True)
class WinRateMatrix:
    """Per ordered pair statistics; pairs that never met are absent."""

    pairs: Mapping[tuple[str, str], PairStats]

    def models(self) -> list[str]:
        return sorted({m for pair in self.pairs for m in pair})

    def win_rate(self, model_i: str, model_j: str) -> float | None:
        stats = self.pairs.get((model_i, model_j))
        return None if stats is None else stats.win_rate

    def average_win_rate(self, model: str) -> float | None:
        """Games-weighted mean win rate over all opponents."""
        score = 0.0
        games = 0
        for (i, _), stats in self.pairs.items():
            if i == model:
                score += stats.wins + 0.5 * stats.ties
                games += stats.games
        return None if games == 0 else score / games


def win_rate_matrix(votes: Iterable[VoteRecord]) -> WinRateMatrix:
    """Fold each vote into both orientations of its pair."""
    counts: dict[tuple[str, str], list[int]] = {}

    def bump(key: tuple[str, str], slot: int) -> None:
        counts.setdefault(key, [0, 0, 0])[slot] += 1

    valid, _ = _partition_valid(list(votes))
    for vote in valid:
        forward = (vote.model_i, vote.model_j)
        backward = (vote.model_j, vote.model_i)
        if vote.outcome == "W":
            bump(forward, 0)
            bump(backward, 1)
        elif vote.outcome == "L":
            bump(forward, 1)
            bump(backward, 0)
        else:
            bump(forward, 2)
            bump(backward, 2)
    return WinRateMatrix({key: PairStats(w, l, t) for key, (w, l, t) in counts.items()})


GPA_POINTS = (4.0, 3.7, 3.3, 3.0, 2.7, 2.3, 2.0, 1.7, 1.3)


def rank_points(rank: int) -> float:
    """Points for a 1-indexed competition rank; rank 10 and beyond earn 1.0."""
    if rank < 1:
        raise ValueError(f"rank must be positive, got {rank}")
    return GPA_POINTS[rank - 1] if rank <= len(GPA_POINTS) else 1.0


@dataclass(frozen=True)
class GpaResult:
    averages: Mapping[str, float]
    tasks_counted: Mapping[str, int]
    skipped_tasks: int

    def ranking(self) -> list[str]:
        return sorted(self.averages, key=lambda m: (-self.averages[m], m))


def gpa_ranking(scores: Mapping[str, Mapping[str, float]]) -> GpaResult:
    """Average rank points per model over tasks.

    Within a task, models rank by score descending; equal scores share the
    best rank and the following ranks are skipped (competition ranking).
    Only the order of scores matters, so any strictly monotone rescaling
    leaves the result unchanged.  Tasks scoring fewer than two models are
    skipped and counted.
    """
    totals: dict[str, float] = {}
    counted: dict[str, int] = {}
    skipped = 0
    for model_scores in scores.values():
        if len(model_scores) < 2:
            skipped += 1
            continue
        values = list(model_scores.values())
        for model, value in model_scores.items():
            rank = 1 + sum(1 for v in values if v > value)
            totals[model] = totals.get(model, 0.0) + rank_points(rank)
            counted[model] = counted.get(model, 0) + 1
    if skipped:
        logger.warning("%d task(s) with fewer than two scored models skipped", skipped)
    averages = {m: totals[m] / counted[m] for m in totals}
    return GpaResult(averages, counted, skipped)


class EloRating(BaseEstimator):
    """Estimator facade over the vote aggregation.

    ``fit`` takes a sequence of :class:`VoteRecord` and computes the
    bootstrap rating table; ``predict`` then returns the expected score of
    model_i for (model_i, model_j) pairs.
    """

    def __init__(
        self,
        base_rating: float = 1000.0,
        d: float = 400.0,
        k: float = 10.0,
        bootstrap_rounds: int = 1000,
        random_state: int = 0,
    ):
        self.base_rating = base_rating
        self.d = d
        self.k = k
        self.bootstrap_rounds = bootstrap_rounds
        self.random_state = random_state

    def _config(self) -> EloConfig:
        return EloConfig(
            base_rating=self.base_rating,
            d=self.d,
            k=self.k,
            bootstrap_rounds=self.bootstrap_rounds,
            rng_seed=self.random_state,
        )

    def fit(self, X: Iterable[VoteRecord], y=None) -> "EloRating":
        votes = list(X)
        self.table_ = bootstrap_ratings(votes, self._config())
        self.ratings_ = self.table_.ratings()
        return self

    def predict(self, X: Iterable[tuple[str, str]]) -> np.ndarray:
        if not hasattr(self, "table_"):
            raise NotFittedError("fit must run before predict")
        out = []
        for model_i, model_j in X:
            for m in (model_i, model_j):
                if m not in self.ratings_:
                    raise ValueError(f"unknown model {m!r}")
            out.append(expected_score(self.ratings_[model_i], self.ratings_[model_j], self.d))
        return np.asarray(out)

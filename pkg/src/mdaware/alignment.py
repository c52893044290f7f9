"""Agreement between a scorer and human preferences.

Two views: record-level accuracy (does the score ordering of a pair match
the vote on that pair) and rank correlations between per-model mean scores
and per-model ratings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .corpus import VoteRecord
from .ratings import _ACTUAL


@dataclass(frozen=True)
class AccuracyResult:
    accuracy: float
    n_correct: int
    n_used: int
    n_skipped_ties: int


def record_accuracy(
    votes: Sequence[VoteRecord],
    scores: Mapping[tuple[str, str], float],
    include_ties: bool = False,
    tie_epsilon: float = 0.0,
) -> AccuracyResult:
    """Fraction of votes whose outcome matches the score ordering.

    A vote counts as correct when the score difference exceeds tie_epsilon
    in the voted direction, or stays within tie_epsilon for a tie vote.
    With include_ties=False, tie votes are dropped from numerator and
    denominator both.  ``scores`` is keyed by (task_id, model); a vote
    whose participant has no score is an error.
    """
    if tie_epsilon < 0:
        raise ValueError(f"tie_epsilon must be non-negative, got {tie_epsilon}")
    correct = 0
    used = 0
    skipped_ties = 0
    for vote in votes:
        if vote.outcome not in _ACTUAL:
            raise ValueError(f"unknown outcome {vote.outcome!r}")
        if vote.outcome == "T" and not include_ties:
            skipped_ties += 1
            continue
        pair_i = (vote.task_id, vote.model_i)
        pair_j = (vote.task_id, vote.model_j)
        for pair in (pair_i, pair_j):
            if pair not in scores:
                raise ValueError(f"no score for task {pair[0]!r}, model {pair[1]!r}")
        diff = scores[pair_i] - scores[pair_j]
        used += 1
        if (
            (diff > tie_epsilon and vote.outcome == "W")
            or (-diff > tie_epsilon and vote.outcome == "L")
            or (abs(diff) <= tie_epsilon and vote.outcome == "T")
        ):
            correct += 1
    if used == 0:
        raise ValueError("no votes left to score after tie filtering")
    return AccuracyResult(correct / used, correct, used, skipped_ties)


@dataclass(frozen=True)
class Correlations:
    pearson: float
    spearman: float
    kendall: float


def correlations(x: Sequence[float], y: Sequence[float]) -> Correlations:
    """Pearson, Spearman (fractional ranks), and Kendall tau-b of two
    equal-length vectors of at least 3 points.

    Zero variance in either vector leaves every coefficient undefined and
    raises instead of reporting 0.
    """
    ax = np.asarray(x, dtype=float)
    ay = np.asarray(y, dtype=float)
    if ax.shape != ay.shape or ax.ndim != 1:
        raise ValueError(f"need two equal-length 1-d vectors, got shapes {ax.shape} and {ay.shape}")
    if len(ax) < 3:
        raise ValueError(f"need at least 3 points, got {len(ax)}")
    if not (np.isfinite(ax).all() and np.isfinite(ay).all()):
        raise ValueError("inputs must be finite")
    if ax.std() == 0 or ay.std() == 0:
        raise ValueError("zero variance: correlation undefined")
    pearson = float(stats.pearsonr(ax, ay).statistic)
    spearman = float(stats.spearmanr(ax, ay).statistic)
    kendall = float(stats.kendalltau(ax, ay).statistic)
    return Correlations(pearson, spearman, kendall)


@dataclass(frozen=True)
class AlignmentReport:
    accuracy: float
    n_used: int
    n_skipped_ties: int
    spearman: float
    pearson: float
    kendall: float
    include_ties: bool


def model_means(scores: Mapping[tuple[str, str], float]) -> dict[str, float]:
    """Mean score per model across tasks."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for (_, model), value in scores.items():
        sums[model] = sums.get(model, 0.0) + value
        counts[model] = counts.get(model, 0) + 1
    return {m: sums[m] / counts[m] for m in sums}


def alignment_report(
    votes: Sequence[VoteRecord],
    scores: Mapping[tuple[str, str], float],
    ratings: Mapping[str, float],
    include_ties: bool = False,
    tie_epsilon: float = 0.0,
) -> AlignmentReport:
    """Accuracy against the votes plus correlations of per-model mean
    scores with per-model ratings, paired over models present in both."""
    acc = record_accuracy(votes, scores, include_ties, tie_epsilon)
    means = model_means(scores)
    models = sorted(set(means) & set(ratings))
    if len(models) < 3:
        raise ValueError(f"need at least 3 models with both scores and ratings, got {len(models)}")
    corr = correlations([means[m] for m in models], [ratings[m] for m in models])
    return AlignmentReport(
        accuracy=acc.accuracy,
        n_used=acc.n_used,
        n_skipped_ties=acc.n_skipped_ties,
        spearman=corr.spearman,
        pearson=corr.pearson,
        kendall=corr.kendall,
        include_ties=include_ties,
    )


@dataclass(frozen=True)
class PerTaskCorrelations:
    pearson: float
    spearman: float
    kendall: float
    n_tasks_used: int
    n_tasks_skipped: int


def per_task_correlations(
    scores: Mapping[tuple[str, str], float],
    ratings: Mapping[str, float],
) -> PerTaskCorrelations:
    """Correlations computed within each task and averaged over tasks.

    A task joins the average only when at least 3 of its scored models
    carry ratings and neither vector is constant; the rest are skipped and
    counted.
    """
    by_task: dict[str, dict[str, float]] = {}
    for (task_id, model), value in scores.items():
        by_task.setdefault(task_id, {})[model] = value
    sums = np.zeros(3)
    used = 0
    skipped = 0
    for model_scores in by_task.values():
        models = sorted(set(model_scores) & set(ratings))
        if len(models) < 3:
            skipped += 1
            continue
        x = [model_scores[m] for m in models]
        y = [ratings[m] for m in models]
        try:
            corr = correlations(x, y)
        except ValueError:
            skipped += 1
            continue
        sums += (corr.pearson, corr.spearman, corr.kendall)
        used += 1
    if used == 0:
        raise ValueError("no task had enough rated models for a correlation")
    return PerTaskCorrelations(
        pearson=float(sums[0] / used),
        spearman=float(sums[1] / used),
        kendall=float(sums[2] / used),
        n_tasks_used=used,
        n_tasks_skipped=skipped,
    )

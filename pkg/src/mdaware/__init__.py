"""Structure-level evaluation of Markdown formatting in model output.

The pipeline: generate responses, have a judge rewrite them into a
model-dependent reference, then score the structural similarity of the two
tag streams.  Ratings, win rates, and human-alignment reports build on the
scores and on pairwise votes collected through the bundled service.
"""

from .alignment import (
    AccuracyResult,
    AlignmentReport,
    Correlations,
    alignment_report,
    correlations,
    record_accuracy,
)
from .corpus import (
    JsonlStore,
    ResponseRecord,
    ScoreRecord,
    TaskRecord,
    VoteRecord,
    load_tasks,
    mean_scores,
)
from .metrics import DRuleConfig, MAScore, classify_token, drule_score, edit_distance, ma_score
from .ratings import (
    EloConfig,
    EloRating,
    RatingTable,
    bootstrap_ratings,
    expected_score,
    gpa_ranking,
    replay,
    win_rate_matrix,
)
from .structure import (
    MarkdownTagExtractor,
    TagKind,
    TagSequence,
    TagToken,
    VOCABULARY,
    htmlify,
    protect_math,
)

__version__ = "0.1.0"

"""Acceptance gate: one test per release criterion.

Each test pins its tolerance inline and goes through public interfaces
only.  Reference implementations come from oracles.py, which shares no
code with the package.
"""

from __future__ import annotations

import json
import math
import random
import time
from collections import Counter
from pathlib import Path

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient
from scipy.stats import chisquare

import oracles
from mdaware.alignment import correlations, record_accuracy
from mdaware.cli import main
from mdaware.corpus import JsonlStore, ResponseRecord, ScoreRecord, VoteRecord
from mdaware.metrics import (
    NON_SCORING_CLASS,
    DRuleConfig,
    classify_token,
    drule_raw,
    drule_score,
    edit_distance,
    ma_score,
)
from mdaware.ratings import (
    GPA_POINTS,
    EloConfig,
    bootstrap_ratings,
    expected_score,
    gpa_ranking,
    rank_points,
    replay,
)
from mdaware.service import create_app
from mdaware.structure import VOCABULARY, TagKind, TagSequence, TagToken, analyze_document

DATA = Path(__file__).parent / "data"
FIXTURE_TASKS = Path(__file__).parent.parent / "fixtures" / "tasks.jsonl"


def golden_manifest() -> list[tuple[str, int, int, str]]:
    rows = []
    for line in (DATA / "golden_streams.tsv").read_text("utf-8").splitlines():
        name, math_n, unterm, stream = line.split("\t")
        rows.append((name, int(math_n), int(unterm), stream))
    return rows


def random_sequence(rng: random.Random, max_len: int, names) -> TagSequence:
    kinds = (TagKind.OPEN, TagKind.CLOSE)
    return TagSequence(tuple(
        TagToken(rng.choice(kinds), rng.choice(names))
        for _ in range(rng.randrange(max_len + 1))
    ))


def test_edit_distance_agrees_exactly_with_both_oracles_in_time():
    """1,000 random pairs against each oracle, exact match, under 60 s."""
    rng = random.Random(20260823)
    small_names = ("h1", "p", "ul", "li", "code", "math")
    start = time.monotonic()
    for _ in range(1000):
        a = random_sequence(rng, 8, small_names)
        b = random_sequence(rng, 8, small_names)
        assert edit_distance(a, b) == oracles.edit_distance_search(list(a), list(b))
    for _ in range(1000):
        a = random_sequence(rng, 20, VOCABULARY)
        b = random_sequence(rng, 20, VOCABULARY)
        assert edit_distance(a, b) == oracles.edit_distance_matrix(list(a), list(b))
    assert time.monotonic() - start < 60.0


def test_metric_axioms_hold_on_ten_thousand_random_cases():
    rng = random.Random(77)
    names = ("h1", "p", "strong", "ol")
    for _ in range(10_000):
        x = random_sequence(rng, 10, names)
        y = random_sequence(rng, 10, names)
        z = random_sequence(rng, 10, names)
        score = ma_score(x, y)
        assert 0.0 <= score.value <= 1.0
        assert score.distance == edit_distance(y, x)
        assert score.distance <= edit_distance(x, z) + edit_distance(z, y)
        assert edit_distance(x, x) == 0
        assert ma_score(x, x).value == 1.0


def test_golden_corpus_streams_stay_frozen_and_math_pairs_are_atomic():
    rows = golden_manifest()
    assert len(rows) >= 50
    for name, math_n, unterm, stream in rows:
        text = (DATA / "golden" / name).read_text("utf-8")
        analysis = analyze_document(text)
        assert analysis.tags.debug() == stream
        assert analyze_document(text).tags.debug() == stream  # stable across runs
        assert analysis.math_segments == math_n
        assert analysis.unterminated_math == unterm
        opens = [i for i, t in enumerate(analysis.tags)
                 if t.kind is TagKind.OPEN and t.name == "math"]
        assert len(opens) == math_n
        for i in opens:  # each protected segment is one indivisible pair
            closer = analysis.tags[i + 1]
            assert closer.kind is TagKind.CLOSE and closer.name == "math"


HAND_SCRIPT = (
    ("ash", "birch", "W"), ("ash", "cedar", "W"), ("birch", "cedar", "W"),
    ("ash", "birch", "W"), ("cedar", "ash", "L"), ("birch", "cedar", "T"),
    ("ash", "cedar", "W"), ("birch", "ash", "W"), ("cedar", "birch", "W"),
    ("ash", "birch", "T"), ("ash", "cedar", "W"), ("birch", "cedar", "W"),
    ("cedar", "ash", "W"), ("ash", "birch", "W"), ("birch", "cedar", "L"),
    ("ash", "cedar", "T"), ("birch", "ash", "L"), ("cedar", "birch", "T"),
    ("ash", "birch", "W"), ("cedar", "ash", "L"),
)
# worked through on paper from 1000 start, k=10, d=400
HAND_RATINGS = {"ash": 1034.729491835, "birch": 981.392497355, "cedar": 983.87801081}
HAND_GAMES = {"ash": 14, "birch": 13, "cedar": 13}


def test_rating_arithmetic_meets_every_pinned_tolerance():
    for r in (1000.0, 1234.5, 777.0):
        assert expected_score(r, r) == 0.5
    assert abs(expected_score(1400.0, 1000.0) - 10.0 / 11.0) <= 1e-12

    rng = random.Random(5)
    models = ("ash", "birch", "cedar", "dogwood")
    votes = []
    for ts in range(60):
        i, j = rng.sample(models, 2)
        votes.append(VoteRecord(task_id=f"t{ts % 7}", model_i=i, model_j=j,
                                outcome=rng.choice(("W", "L", "T")), ts=ts))
    for prefix in range(1, len(votes) + 1):
        table = replay(votes[:prefix])
        total = sum(entry.rating for entry in table.entries.values())
        assert abs(total - 1000.0 * len(table.entries)) <= 1e-9

    scripted = [VoteRecord(task_id="t1", model_i=i, model_j=j, outcome=o, ts=ts)
                for ts, (i, j, o) in enumerate(HAND_SCRIPT)]
    table = replay(scripted)
    for model, rating in HAND_RATINGS.items():
        assert table[model].rating == pytest.approx(rating, abs=1e-9)
        assert table[model].games == HAND_GAMES[model]

    cfg = EloConfig(bootstrap_rounds=200, rng_seed=42)
    assert bootstrap_ratings(scripted, cfg).entries == bootstrap_ratings(scripted, cfg).entries


def test_decay_rule_closed_form_self_score_and_saturation_bound():
    for gamma in (0.3, 0.5, 0.9):
        cfg = DRuleConfig(gamma=gamma)
        for name in ("h2", "blockquote"):
            weight = cfg.weight(classify_token(TagToken(TagKind.OPEN, name)))
            for n in range(1, 31):
                seq = TagSequence(tuple(TagToken(TagKind.OPEN, name) for _ in range(n)))
                closed = weight * (1.0 - gamma ** n) / (1.0 - gamma)
                assert abs(drule_raw(seq, cfg) - closed) <= 1e-12

    for name, _, _, _ in golden_manifest():
        tags = analyze_document((DATA / "golden" / name).read_text("utf-8")).tags
        assert drule_score(tags, tags) == 1.0

    rng = random.Random(9)
    cfg = DRuleConfig()
    names = ("h1", "code", "ul", "strong", "p", "em")
    for _ in range(200):
        tokens = tuple(TagToken(TagKind.OPEN, rng.choice(names))
                       for _ in range(rng.randrange(1, 400)))
        classes = {classify_token(t) for t in tokens} - {NON_SCORING_CLASS}
        bound = sum(cfg.weight(c) / (1.0 - cfg.gamma) for c in classes)
        assert drule_raw(TagSequence(tokens), cfg) <= bound


def test_correlations_match_oracles_and_the_hand_counted_vote_sheet():
    rng = random.Random(10)
    grid = (0.0, 0.25, 0.5, 0.75, 1.0)
    checked = 0
    while checked < 500:
        n = rng.randrange(3, 13)
        x = [rng.choice(grid) for _ in range(n)]
        y = [rng.choice(grid) for _ in range(n)]
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        result = correlations(x, y)
        assert abs(result.pearson - oracles.pearson(x, y)) <= 1e-12
        assert abs(result.spearman - oracles.spearman(x, y)) <= 1e-12
        assert abs(result.kendall - oracles.kendall_tau_b(x, y)) <= 1e-12
        checked += 1

    doubled = correlations([0.1, 0.2, 0.4, 0.8], [0.2, 0.4, 0.8, 1.6])
    assert doubled.pearson == pytest.approx(1.0, abs=1e-12)
    assert doubled.spearman == pytest.approx(1.0, abs=1e-12)
    assert doubled.kendall == pytest.approx(1.0, abs=1e-12)

    scores = {("t1", "a"): 0.9, ("t1", "b"): 0.6, ("t1", "c"): 0.6,
              ("t2", "a"): 0.3, ("t2", "b"): 0.5, ("t2", "c"): 0.5}
    # correct by hand: rows 1, 2, 5, 6 without ties, plus rows 8 and 9 with them
    sheet = (
        ("t1", "a", "b", "W"), ("t1", "a", "c", "W"), ("t1", "b", "c", "W"),
        ("t1", "c", "a", "W"), ("t2", "b", "a", "W"), ("t2", "c", "a", "W"),
        ("t2", "a", "b", "W"), ("t1", "b", "c", "T"), ("t2", "b", "c", "T"),
        ("t1", "a", "b", "T"),
    )
    votes = [VoteRecord(task_id=t, model_i=i, model_j=j, outcome=o, ts=ts)
             for ts, (t, i, j, o) in enumerate(sheet)]
    strict = record_accuracy(votes, scores)
    assert (strict.n_correct, strict.n_used, strict.n_skipped_ties) == (4, 7, 3)
    assert strict.accuracy == 4 / 7
    lenient = record_accuracy(votes, scores, include_ties=True)
    assert (lenient.n_correct, lenient.n_used) == (6, 10)
    assert lenient.accuracy == 6 / 10


def test_rank_point_mapping_and_monotone_rescale_invariance():
    assert GPA_POINTS == (4.0, 3.7, 3.3, 3.0, 2.7, 2.3, 2.0, 1.7, 1.3)
    for place, points in enumerate(GPA_POINTS, start=1):
        assert rank_points(place) == points
    assert rank_points(10) == 1.0
    assert rank_points(99) == 1.0

    rng = random.Random(3)
    for _ in range(100):
        table = {f"t{t}": {f"m{m}": round(rng.random(), 3) for m in range(4)}
                 for t in range(6)}
        rescaled = {t: {m: math.exp(2.0 * v) for m, v in models.items()}
                    for t, models in table.items()}
        base = gpa_ranking(table)
        moved = gpa_ranking(rescaled)
        assert base.averages == moved.averages
        assert base.ranking() == moved.ranking()


def test_offline_pipeline_with_identity_and_enriching_judges(tmp_path):
    runner = CliRunner()

    def cli(*args: str) -> None:
        result = runner.invoke(main, list(args), catch_exceptions=False)
        assert result.exit_code == 0, result.output

    # identity judge: the reference equals the response, full marks everywhere
    models = tmp_path / "models.json"
    models.write_text(json.dumps({"models": [
        {"base_url": "mock://echo", "model_name": "echo", "name": "plain"},
        {"base_url": "mock://styler?level=4", "model_name": "styler", "name": "styled"},
    ]}), "utf-8")
    judge = tmp_path / "identity.json"
    judge.write_text(json.dumps({"base_url": "mock://identity-judge", "model_name": "judge-1"}), "utf-8")
    out = tmp_path / "identity"
    cli("generate", "--tasks", str(FIXTURE_TASKS), "--models", str(models), "--out", str(out))
    cli("rewrite", "--judge", str(judge), "--out", str(out))
    cli("score", "--out", str(out))
    records = JsonlStore(out / "scores.jsonl", ScoreRecord).scan()
    assert len(records) == 200
    assert all(record.value == 1.0 for record in records)

    # enriching judge: every reference gains structure the response lacks,
    # so scores fall below one and order the models by produced structure
    stylers = tmp_path / "stylers.json"
    stylers.write_text(json.dumps({"models": [
        {"base_url": f"mock://styler?level={level}", "model_name": "styler", "name": f"level{level}"}
        for level in range(6)
    ]}), "utf-8")
    enrich = tmp_path / "enrich.json"
    enrich.write_text(json.dumps({"base_url": "mock://enrich-judge", "model_name": "judge-1"}), "utf-8")
    out = tmp_path / "enrich"
    cli("generate", "--tasks", str(FIXTURE_TASKS), "--models", str(stylers), "--out", str(out))
    cli("rewrite", "--judge", str(enrich), "--out", str(out))
    cli("score", "--out", str(out))
    records = JsonlStore(out / "scores.jsonl", ScoreRecord).scan()
    assert len(records) == 600
    assert all(record.value < 1.0 for record in records)
    by_model: dict[str, list[float]] = {}
    for record in records:
        by_model.setdefault(record.model, []).append(record.value)
    means = {model: sum(values) / len(values) for model, values in by_model.items()}
    assert sorted(means, key=means.get, reverse=True) == [
        "level5", "level4", "level3", "level2", "level1", "level0",
    ]


def test_vote_service_anonymity_uniform_sampling_and_durable_log(tmp_path):
    model_texts = {
        "walrus": "Cooling works by compression.",
        "yak": "## Answer\n\nHeat moves outward.",
        "zebra": "- compressor\n- coils",
    }
    responses = tmp_path / "responses.jsonl"
    store = JsonlStore(responses, ResponseRecord)
    for task_id in ("t1", "t2"):
        for model, text in model_texts.items():
            store.append(ResponseRecord(task_id=task_id, model=model, phase="generated", text=text))

    # a thousand served tickets, not one model identifier in the bytes
    client = TestClient(create_app(responses, tmp_path / "votes_a.jsonl"))
    for _ in range(1000):
        response = client.get("/api/pair")
        assert response.status_code == 200
        assert not any(model in response.text for model in model_texts)
        assert set(response.json()) == {"pair_id", "task_id", "prompt", "left", "right", "expires_in"}

    # sampling over (task, left model, right model) cells is uniform
    client = TestClient(create_app(responses, tmp_path / "votes_b.jsonl", seed=0))
    text_to_model = {text: model for model, text in model_texts.items()}
    counts: Counter = Counter()
    for _ in range(10_000):
        pair = client.get("/api/pair").json()
        counts[(pair["task_id"], text_to_model[pair["left"]], text_to_model[pair["right"]])] += 1
    cells = [(t, a, b) for t in ("t1", "t2")
             for a in model_texts for b in model_texts if a != b]
    assert set(counts) == set(cells)
    assert chisquare([counts[cell] for cell in cells]).pvalue > 0.01

    # a torn tail from a crash is sealed onto its own line: every real vote
    # stays whole, and no later vote fuses with the fragment
    torn = tmp_path / "votes_torn.jsonl"
    seeded = [json.dumps({"task_id": "t1", "model_i": "walrus", "model_j": "yak",
                          "outcome": "W", "ts": ts}) for ts in (0, 1)]
    fragment = '{"task_id": "t1", "model_i": "wal'
    torn.write_text("\n".join(seeded) + "\n" + fragment, "utf-8")
    client = TestClient(create_app(responses, torn))
    for outcome in ("W", "L", "T"):
        pair_id = client.get("/api/pair").json()["pair_id"]
        assert client.post("/api/vote", json={"pair_id": pair_id, "outcome": outcome}).status_code == 200
    raw = torn.read_text("utf-8")
    assert raw.endswith("\n")
    lines = raw.splitlines()
    assert len(lines) == 6
    assert lines[2] == fragment
    whole = [json.loads(line) for i, line in enumerate(lines) if i != 2]
    assert [record["outcome"] for record in whole] == ["W", "W", "W", "L", "T"]
    assert [record["ts"] for record in whole] == [0, 1, 2, 3, 4]
    assert [vote.ts for vote in JsonlStore(torn, VoteRecord).scan()] == [0, 1, 2, 3, 4]

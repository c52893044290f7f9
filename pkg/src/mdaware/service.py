"""HTTP service for pairwise preference voting.

Serves anonymized response pairs, records votes, and exposes the live
leaderboard.  Model identities stay server-side until a vote for the pair
is recorded; the vote is appended to the log before the reveal is sent, so
an acknowledged vote is always durable.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Literal

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from .corpus import JsonlStore, ResponseRecord, VoteRecord, load_tasks
from .ratings import EloConfig, bootstrap_ratings, replay

logger = logging.getLogger(__name__)

# Expired tickets are kept around for a while so a late vote gets an
# explicit 410 rather than an unexplained 404.
_PURGE_FACTOR = 10


@dataclass
class _Ticket:
    task_id: str
    model_left: str
    model_right: str
    created_at: float
    voted: bool = False


class VoteIn(BaseModel):
    pair_id: str
    outcome: Literal["W", "L", "T"]
    session: str | None = None


def create_app(
    responses_path: str | Path,
    votes_path: str | Path,
    tasks_path: str | Path | None = None,
    *,
    ttl_seconds: float = 1800,
    ci_interval: int = 10,
    seed: int = 0,
    cors_origins: list[str] | None = None,
    elo: EloConfig = EloConfig(),
    static_dir: str | Path | None = None,
) -> FastAPI:
    """Build the service around one response store and one vote log.

    ``ci_interval`` is the number of new votes after which the bootstrap
    confidence intervals are recomputed; between refreshes the cached
    bounds are served (ratings themselves are replayed on every request).
    """
    responses = JsonlStore(responses_path, ResponseRecord).scan(phase="generated")
    latest: dict[tuple[str, str], str] = {}
    for record in responses:
        latest[(record.task_id, record.model)] = record.text
    by_task: dict[str, dict[str, str]] = {}
    for (task_id, model), text in latest.items():
        by_task.setdefault(task_id, {})[model] = text
    eligible = sorted(t for t, models in by_task.items() if len(models) >= 2)
    known_models = sorted({m for models in by_task.values() for m in models})

    prompts: dict[str, str] = {}
    if tasks_path is not None and Path(tasks_path).exists():
        prompts = {t.task_id: t.prompt for t in load_tasks(tasks_path).records}
    elif tasks_path is not None:
        logger.warning("no task file at %s; pair prompts will be empty", tasks_path)

    votes_store = JsonlStore(votes_path, VoteRecord)
    votes_cache: list[VoteRecord] = votes_store.scan()
    next_ts = max((v.ts for v in votes_cache), default=-1) + 1

    rng = Random(seed)
    lock = threading.Lock()
    tickets: dict[str, _Ticket] = {}
    ci_cache: dict[str, tuple[float | None, float | None]] = {}
    ci_at = -1

    app = FastAPI(title="mdaware vote service")
    if cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=cors_origins,
            allow_methods=["*"],
            allow_headers=["*"],
        )

    def _purge(now: float) -> None:
        horizon = now - ttl_seconds * _PURGE_FACTOR
        for pair_id in [p for p, t in tickets.items() if t.created_at < horizon]:
            del tickets[pair_id]

    def _refresh_cis_locked() -> None:
        nonlocal ci_at, ci_cache
        if not votes_cache:
            ci_cache = {}
            return
        if ci_at >= 0 and len(votes_cache) - ci_at < ci_interval:
            return
        table = bootstrap_ratings(votes_cache, elo, known_models)
        ci_cache = {m: (table[m].ci_low, table[m].ci_high) for m in table.entries}
        ci_at = len(votes_cache)

    @app.get("/api/pair")
    def get_pair() -> dict:
        now = time.time()
        with lock:
            _purge(now)
            if not eligible:
                raise HTTPException(
                    status_code=409,
                    detail="need responses from at least two models for some task",
                )
            task_id = rng.choice(eligible)
            left, right = rng.sample(sorted(by_task[task_id]), 2)
            pair_id = uuid.uuid4().hex
            tickets[pair_id] = _Ticket(task_id, left, right, now)
        return {
            "pair_id": pair_id,
            "task_id": task_id,
            "prompt": prompts.get(task_id, ""),
            "left": by_task[task_id][left],
            "right": by_task[task_id][right],
            "expires_in": ttl_seconds,
        }

    @app.post("/api/vote")
    def post_vote(vote: VoteIn) -> dict:
        now = time.time()
        with lock:
            ticket = tickets.get(vote.pair_id)
            if ticket is None:
                raise HTTPException(status_code=404, detail="unknown pair_id")
            if ticket.voted:
                raise HTTPException(status_code=409, detail="pair already voted")
            if now - ticket.created_at > ttl_seconds:
                raise HTTPException(status_code=410, detail="pair expired")
            nonlocal next_ts
            record = VoteRecord(
                task_id=ticket.task_id,
                model_i=ticket.model_left,
                model_j=ticket.model_right,
                outcome=vote.outcome,
                ts=next_ts,
            )
            votes_store.append(record)  # durable before the reveal below
            ticket.voted = True
            votes_cache.append(record)
            next_ts += 1
        if vote.session:
            logger.info("vote %s from session %s", record.ts, vote.session)
        return {
            "model_left": ticket.model_left,
            "model_right": ticket.model_right,
            "outcome": vote.outcome,
        }

    @app.get("/api/leaderboard")
    def get_leaderboard() -> dict:
        with lock:
            _refresh_cis_locked()
            votes = list(votes_cache)
            cis = dict(ci_cache)
        table = replay(votes, elo, known_models)
        rows = []
        for model in table.models():
            low, high = cis.get(model, (None, None))
            rows.append({
                "model": model,
                "rating": table[model].rating,
                "ci_low": low,
                "ci_high": high,
                "games": table[model].games,
            })
        ties = sum(1 for v in votes if v.outcome == "T")
        return {
            "models": rows,
            "votes": len(votes),
            "tie_ratio": ties / len(votes) if votes else 0.0,
        }

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app

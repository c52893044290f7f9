"""Batch pipeline entry point.

Subcommands mirror the pipeline: generate responses, rewrite them into
references, score, then rank / elo / align / report.  Commands are
idempotent: work already present in the output stores is skipped unless
--force, so an interrupted run continues where it stopped.

Exit codes: 0 full success, 2 partial (some records failed, the rest were
written), 1 fatal.
"""

from __future__ import annotations

import json
import logging
import sys
import time
import uuid
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import click

from . import __version__, gateway
from .alignment import alignment_report, per_task_correlations
from .corpus import (
    METRICS,
    SUBJECT_TITLES,
    JsonlStore,
    ResponseRecord,
    ScoreRecord,
    TaskRecord,
    VoteRecord,
    fingerprint,
    load_tasks,
    mean_scores,
)
from .gateway import EndpointConfig, GatewayError, JudgeParseError, RewritePrompt
from .metrics import DRuleConfig, drule_raw, ma_score
from .ratings import EloConfig, bootstrap_ratings, gpa_ranking, replay
from .structure import VOCABULARY, analyze_document

logger = logging.getLogger(__name__)

DIALECT = "commonmark+tables+strikethrough+tasklist"


def _fatal(message: str) -> "SystemExit":
    click.echo(f"error: {message}", err=True)
    return SystemExit(1)


def _read_json(path: Path, what: str) -> Any:
    try:
        return json.loads(path.read_text("utf-8"))
    except FileNotFoundError:
        raise _fatal(f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise _fatal(f"{what} file {path} is not valid JSON: {exc}")


def _load_endpoints(models_path: str) -> list[EndpointConfig]:
    data = _read_json(Path(models_path), "models config")
    entries = data.get("models") if isinstance(data, Mapping) else None
    if not isinstance(entries, list) or not entries:
        raise _fatal(f"{models_path} must contain a non-empty \"models\" list")
    try:
        endpoints = [EndpointConfig.from_json(e) for e in entries]
    except (ValueError, TypeError) as exc:
        raise _fatal(f"bad endpoint in {models_path}: {exc}")
    names = [e.record_name for e in endpoints]
    if len(set(names)) != len(names):
        raise _fatal(f"duplicate model names in {models_path}")
    return endpoints


def _load_judge(judge_path: str) -> EndpointConfig:
    data = _read_json(Path(judge_path), "judge config")
    try:
        return EndpointConfig.from_json(data)
    except (ValueError, TypeError) as exc:
        raise _fatal(f"bad judge config in {judge_path}: {exc}")


def _load_task_records(tasks_path: str) -> list[TaskRecord]:
    try:
        result = load_tasks(tasks_path)
    except FileNotFoundError:
        raise _fatal(f"tasks file not found: {tasks_path}")
    for error in result.errors:
        click.echo(f"warning: {tasks_path}:{error.line_number}: {error.message}", err=True)
    if not result.records:
        raise _fatal(f"no valid tasks in {tasks_path}")
    return result.records


def _require_store(path: Path, producer: str) -> None:
    if not path.exists():
        raise _fatal(f"missing upstream artifact {path}; produce it with `mdaware {producer}`")


def _update_manifest(out: Path, **fields: Any) -> None:
    """Merge fields into the run manifest, creating it on first use.

    The manifest is written before any network call so a run directory
    always records what produced it.
    """
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.json"
    manifest: dict[str, Any] = {}
    if path.exists():
        manifest = json.loads(path.read_text("utf-8"))
    else:
        manifest["run_id"] = uuid.uuid4().hex[:12]
        manifest["created_at"] = int(time.time() * 1000)
    manifest["out"] = str(out)
    metrics = set(manifest.get("metrics", []))
    if "metric" in fields:
        metrics.add(fields.pop("metric"))
    if metrics:
        manifest["metrics"] = sorted(metrics)
    for key, value in fields.items():
        if value is not None:
            manifest[key] = value
    path.write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", "utf-8")


def _endpoint_payload(endpoint: EndpointConfig) -> dict[str, Any]:
    return {
        "name": endpoint.record_name,
        "base_url": endpoint.base_url,
        "model_name": endpoint.model_name,
        "api_key_env": endpoint.api_key_env,
        "temperature": endpoint.temperature,
    }


def _latest_by_key(records: Iterable, key_fn: Callable) -> dict:
    """Last record wins for each key; replays of --force leave older rows behind."""
    latest = {}
    for record in records:
        latest[key_fn(record)] = record
    return latest


def _compact_store(path: Path, record_type, drop: Callable) -> None:
    """Rewrite a store without the records matching ``drop`` (atomic rename)."""
    store = JsonlStore(path, record_type)
    keep = [r for r in store.scan() if not drop(r)]
    tmp = path.with_suffix(".tmp")
    with JsonlStore(tmp, record_type) as fresh:
        for record in keep:
            fresh.append(record)
    if not keep:
        tmp.write_text("")
    tmp.replace(path)


def _finish(done: int, skipped: int, failures: list[tuple[str, Exception]]) -> None:
    for name, exc in failures:
        click.echo(f"failed: {name}: {exc}", err=True)
    click.echo(f"done: {done} new, {skipped} skipped, {len(failures)} failed")
    if failures:
        sys.exit(2)


def _format_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


@click.group()
@click.version_option(__version__)
@click.option("--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool) -> None:
    """Markdown structure evaluation pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--tasks", "tasks_path", required=True, help="Task file (one JSON object per line).")
@click.option("--models", "models_path", required=True, help="Endpoints config with a \"models\" list.")
@click.option("--out", default="run", show_default=True, help="Run directory.")
@click.option("--force", is_flag=True, help="Recompute records that already exist.")
def generate(tasks_path: str, models_path: str, out: str, force: bool) -> None:
    """Ask every model every task prompt, verbatim."""
    out_dir = Path(out)
    tasks = _load_task_records(tasks_path)
    endpoints = _load_endpoints(models_path)
    _update_manifest(
        out_dir,
        tasks_path=str(tasks_path),
        models=[_endpoint_payload(e) for e in endpoints],
    )
    store_path = out_dir / "responses.jsonl"
    store = JsonlStore(store_path, ResponseRecord)
    existing = {
        (r.task_id, r.model)
        for r in store.scan(phase="generated")
    }
    if force and store_path.exists():
        targets = {(t.task_id, e.record_name) for t in tasks for e in endpoints}
        _compact_store(
            store_path, ResponseRecord,
            lambda r: r.phase == "generated" and (r.task_id, r.model) in targets,
        )
        existing = set()
    done = 0
    skipped = 0
    failures: list[tuple[str, Exception]] = []
    for endpoint in endpoints:
        client = gateway.client_for(endpoint)
        todo = [t for t in tasks if (t.task_id, endpoint.record_name) not in existing]
        skipped += len(tasks) - len(todo)
        results = gateway.run_concurrently(
            lambda task: gateway.generate(task, endpoint, client), todo, endpoint.max_concurrency
        )
        for task, record, error in results:
            if error is not None:
                failures.append((f"{task.task_id}/{endpoint.record_name}", error))
            else:
                store.append(record)
                done += 1
    _finish(done, skipped, failures)


@main.command()
@click.option("--judge", "judge_path", required=True, help="Judge endpoint config (single JSON object).")
@click.option("--out", default="run", show_default=True)
@click.option("--force", is_flag=True)
def rewrite(judge_path: str, out: str, force: bool) -> None:
    """Have the judge restyle every generated response into its reference."""
    out_dir = Path(out)
    judge = _load_judge(judge_path)
    store_path = out_dir / "responses.jsonl"
    _require_store(store_path, "generate")
    _update_manifest(out_dir, judge=_endpoint_payload(judge))
    prompt = RewritePrompt()
    store = JsonlStore(store_path, ResponseRecord)
    generated = list(_latest_by_key(
        store.scan(phase="generated"), lambda r: (r.task_id, r.model)
    ).values())
    if not generated:
        raise _fatal(f"no generated responses in {store_path}; produce them with `mdaware generate`")
    existing = {(r.task_id, r.model) for r in store.scan(phase="rewritten")}
    if force and existing:
        targets = {(r.task_id, r.model) for r in generated}
        _compact_store(
            store_path, ResponseRecord,
            lambda r: r.phase == "rewritten" and (r.task_id, r.model) in targets,
        )
        existing = set()
    client = gateway.client_for(judge)
    todo = [r for r in generated if (r.task_id, r.model) not in existing]
    results = gateway.run_concurrently(
        lambda response: gateway.rewrite(response, judge, prompt, client), todo, judge.max_concurrency
    )
    done = 0
    failures: list[tuple[str, Exception]] = []
    for response, record, error in results:
        if error is not None:
            failures.append((f"{response.task_id}/{response.model}", error))
        else:
            store.append(record)
            done += 1
    _finish(done, len(generated) - len(todo), failures)


def _mdeval_record(gen: ResponseRecord, rew: ResponseRecord, char_level: bool) -> ScoreRecord:
    response = analyze_document(gen.text)
    reference = analyze_document(rew.text)
    score = ma_score(response.tags, reference.tags, char_level=char_level)
    return ScoreRecord(
        task_id=gen.task_id,
        model=gen.model,
        metric="mdeval",
        value=score.value,
        detail={
            "distance": score.distance,
            "len_r": score.len_r,
            "len_ref": score.len_ref,
            "unterminated_math_r": response.unterminated_math,
            "unterminated_math_ref": reference.unterminated_math,
        },
        config_hash=fingerprint({
            "metric": "mdeval",
            "dialect": DIALECT,
            "vocabulary": list(VOCABULARY),
            "char_level": char_level,
        }),
    )


def _drule_record(gen: ResponseRecord, rew: ResponseRecord, cfg: DRuleConfig) -> ScoreRecord:
    raw_response = drule_raw(analyze_document(gen.text).tags, cfg)
    raw_reference = drule_raw(analyze_document(rew.text).tags, cfg)
    value = 1.0 if raw_reference == 0 else min(1.0, raw_response / raw_reference)
    return ScoreRecord(
        task_id=gen.task_id,
        model=gen.model,
        metric="drule",
        value=value,
        detail={"raw_response": raw_response, "raw_reference": raw_reference},
        config_hash=fingerprint({
            "metric": "drule",
            "dialect": DIALECT,
            "vocabulary": list(VOCABULARY),
            **cfg.as_payload(),
        }),
    )


@main.command()
@click.option("--metric", type=click.Choice(METRICS), default="mdeval", show_default=True)
@click.option("--judge", "judge_path", default=None, help="Judge endpoint config; required for pllm/rllm.")
@click.option("--char-level", is_flag=True, help="Compare serialized tag streams character by character.")
@click.option("--out", default="run", show_default=True)
@click.option("--force", is_flag=True)
def score(metric: str, judge_path: str | None, char_level: bool, out: str, force: bool) -> None:
    """Score every (task, model) pair under the chosen metric."""
    out_dir = Path(out)
    responses_path = out_dir / "responses.jsonl"
    _require_store(responses_path, "generate")
    responses = JsonlStore(responses_path, ResponseRecord)
    generated = _latest_by_key(responses.scan(phase="generated"), lambda r: (r.task_id, r.model))
    rewritten = _latest_by_key(responses.scan(phase="rewritten"), lambda r: (r.task_id, r.model))
    if not generated:
        raise _fatal(f"no generated responses in {responses_path}; produce them with `mdaware generate`")
    needs_reference = metric in ("mdeval", "drule", "rllm")
    if needs_reference and not rewritten:
        raise _fatal(f"no rewritten references in {responses_path}; produce them with `mdaware rewrite`")

    judge = None
    client = None
    if metric in ("pllm", "rllm"):
        if judge_path is None:
            raise _fatal(f"metric {metric} needs --judge")
        judge = _load_judge(judge_path)
        client = gateway.client_for(judge)
    _update_manifest(out_dir, metric=metric, judge=_endpoint_payload(judge) if judge else None)

    scores_path = out_dir / "scores.jsonl"
    store = JsonlStore(scores_path, ScoreRecord)
    existing = {(r.task_id, r.model) for r in store.scan(metric=metric)}
    if force and existing:
        _compact_store(scores_path, ScoreRecord, lambda r: r.metric == metric)
        existing = set()

    drule_cfg = DRuleConfig()
    done = 0
    skipped = 0
    invalid = 0
    failures: list[tuple[str, Exception]] = []
    for key in sorted(generated):
        if key in existing:
            skipped += 1
            continue
        gen = generated[key]
        reference = rewritten.get(key)
        try:
            if needs_reference and reference is None:
                raise ValueError("no rewritten reference; run `mdaware rewrite`")
            if metric == "mdeval":
                record = _mdeval_record(gen, reference, char_level)
            elif metric == "drule":
                record = _drule_record(gen, reference, drule_cfg)
            elif metric == "pllm":
                record = gateway.judge_score_pllm(gen, judge, client)
            else:
                record = gateway.judge_score_rllm(gen, reference, judge, client)
        except JudgeParseError as exc:
            invalid += 1
            failures.append((f"{key[0]}/{key[1]}", exc))
            continue
        except (ValueError, GatewayError) as exc:
            failures.append((f"{key[0]}/{key[1]}", exc))
            continue
        store.append(record)
        done += 1
    if invalid:
        click.echo(f"invalid judge scores excluded: {invalid}", err=True)
    _finish(done, skipped, failures)


def _load_scores(out_dir: Path, metric: str) -> dict[tuple[str, str], float]:
    scores_path = out_dir / "scores.jsonl"
    _require_store(scores_path, "score")
    records = JsonlStore(scores_path, ScoreRecord).scan(metric=metric)
    if not records:
        raise _fatal(f"no {metric} scores in {scores_path}; produce them with `mdaware score --metric {metric}`")
    return {k: r.value for k, r in _latest_by_key(records, lambda r: (r.task_id, r.model)).items()}


@main.command()
@click.option("--metric", type=click.Choice(METRICS), default="mdeval", show_default=True)
@click.option("--method", type=click.Choice(["mean", "gpa"]), default="mean", show_default=True)
@click.option("--out", default="run", show_default=True)
def rank(metric: str, method: str, out: str) -> None:
    """Rank models by mean score or by average rank points."""
    scores = _load_scores(Path(out), metric)
    if method == "mean":
        sums: dict[str, list[float]] = {}
        for (_, model), value in scores.items():
            sums.setdefault(model, []).append(value)
        means = {m: sum(v) / len(v) for m, v in sums.items()}
        ordered = sorted(means, key=lambda m: (-means[m], m))
        rows = [
            [str(i), m, f"{means[m]:.4f}", str(len(sums[m]))]
            for i, m in enumerate(ordered, start=1)
        ]
        click.echo(_format_table(["Rank", "Model", "Score", "Tasks"], rows))
    else:
        by_task: dict[str, dict[str, float]] = {}
        for (task_id, model), value in scores.items():
            by_task.setdefault(task_id, {})[model] = value
        result = gpa_ranking(by_task)
        if result.skipped_tasks:
            click.echo(f"warning: {result.skipped_tasks} task(s) had fewer than two models", err=True)
        rows = [
            [str(i), m, f"{result.averages[m]:.3f}", str(result.tasks_counted[m])]
            for i, m in enumerate(result.ranking(), start=1)
        ]
        click.echo(_format_table(["Rank", "Model", "Points", "Tasks"], rows))


def _load_votes(votes_path: Path) -> list[VoteRecord]:
    _require_store(votes_path, "serve` (and collect votes through the UI) or import a vote log with `--votes")
    votes = JsonlStore(votes_path, VoteRecord).scan()
    if not votes:
        raise _fatal(f"no votes in {votes_path}")
    return votes


@main.command()
@click.option("--votes", "votes_path", default=None, help="Vote log [default: OUT/votes.jsonl].")
@click.option("--bootstrap-rounds", default=1000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default="run", show_default=True)
def elo(votes_path: str | None, bootstrap_rounds: int, seed: int, out: str) -> None:
    """Replay votes into ratings with bootstrap confidence intervals."""
    out_dir = Path(out)
    votes = _load_votes(Path(votes_path) if votes_path else out_dir / "votes.jsonl")
    cfg = EloConfig(bootstrap_rounds=bootstrap_rounds, rng_seed=seed)
    table = bootstrap_ratings(votes, cfg)
    ties = sum(1 for v in votes if v.outcome == "T")
    rows = []
    lines = []
    for model in table.models():
        entry = table[model]
        rows.append([
            model, f"{entry.rating:.1f}", f"{entry.ci_low:.1f}", f"{entry.ci_high:.1f}", str(entry.games),
        ])
        lines.append(json.dumps({
            "model": model,
            "rating": entry.rating,
            "ci_low": entry.ci_low,
            "ci_high": entry.ci_high,
            "games": entry.games,
        }, ensure_ascii=False))
    click.echo(_format_table(["Model", "Rating", "CI low", "CI high", "Games"], rows))
    click.echo(f"votes: {len(votes)}, tie ratio: {ties / len(votes):.3f}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "leaderboard.jsonl").write_text("\n".join(lines) + "\n", "utf-8")


@main.command()
@click.option("--votes", "votes_path", default=None, help="Vote log [default: OUT/votes.jsonl].")
@click.option("--metric", type=click.Choice(METRICS), default="mdeval", show_default=True)
@click.option("--include-ties", is_flag=True, help="Count tie votes in the accuracy.")
@click.option("--tie-epsilon", default=0.0, show_default=True)
@click.option("--per-task", is_flag=True, help="Also average correlations computed within each task.")
@click.option("--out", default="run", show_default=True)
def align(
    votes_path: str | None, metric: str, include_ties: bool, tie_epsilon: float, per_task: bool, out: str
) -> None:
    """Compare the scorer against human votes."""
    out_dir = Path(out)
    scores = _load_scores(out_dir, metric)
    votes = _load_votes(Path(votes_path) if votes_path else out_dir / "votes.jsonl")
    ratings = replay(votes).ratings()
    try:
        report = alignment_report(votes, scores, ratings, include_ties, tie_epsilon)
    except ValueError as exc:
        raise _fatal(str(exc))
    rows = [[
        f"{report.accuracy:.3f}", f"{report.spearman:.3f}", f"{report.pearson:.3f}", f"{report.kendall:.3f}",
        str(report.n_used), str(report.n_skipped_ties),
    ]]
    click.echo(_format_table(
        ["Accuracy", "Spearman", "Pearson", "Kendall", "Votes used", "Ties skipped"], rows
    ))
    payload = {
        "metric": metric,
        "accuracy": report.accuracy,
        "spearman": report.spearman,
        "pearson": report.pearson,
        "kendall": report.kendall,
        "n_used": report.n_used,
        "n_skipped_ties": report.n_skipped_ties,
        "include_ties": report.include_ties,
        "tie_epsilon": tie_epsilon,
    }
    if per_task:
        try:
            per = per_task_correlations(scores, ratings)
        except ValueError as exc:
            raise _fatal(str(exc))
        click.echo(
            f"per-task (over {per.n_tasks_used} tasks, {per.n_tasks_skipped} skipped): "
            f"spearman {per.spearman:.3f}, pearson {per.pearson:.3f}, kendall {per.kendall:.3f}"
        )
        payload["per_task"] = {
            "spearman": per.spearman,
            "pearson": per.pearson,
            "kendall": per.kendall,
            "n_tasks_used": per.n_tasks_used,
            "n_tasks_skipped": per.n_tasks_skipped,
        }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "alignment.json").write_text(json.dumps(payload, indent=2) + "\n", "utf-8")


@main.command()
@click.option("--metric", type=click.Choice(METRICS), default="mdeval", show_default=True)
@click.option("--group-by", type=click.Choice(["model", "subject", "language"]), default="model", show_default=True)
@click.option("--tasks", "tasks_path", default=None, help="Task file; required for subject/language grouping.")
@click.option("--out", default="run", show_default=True)
def report(metric: str, group_by: str, tasks_path: str | None, out: str) -> None:
    """Mean scores grouped by model, and optionally by subject or language."""
    out_dir = Path(out)
    scores_path = out_dir / "scores.jsonl"
    _require_store(scores_path, "score")
    records = JsonlStore(scores_path, ScoreRecord).scan(metric=metric)
    records = list(_latest_by_key(records, lambda r: (r.task_id, r.model)).values())
    if not records:
        raise _fatal(f"no {metric} scores in {scores_path}")
    tasks = None
    grouping = ("model",) if group_by == "model" else ("model", group_by)
    if group_by != "model":
        if tasks_path is None:
            raise _fatal(f"grouping by {group_by} needs --tasks")
        tasks = {t.task_id: t for t in _load_task_records(tasks_path)}
    try:
        groups = mean_scores(records, grouping, tasks)
    except ValueError as exc:
        raise _fatal(str(exc))
    if group_by == "model":
        ordered = sorted(groups.items(), key=lambda kv: (-kv[1].mean, kv[0]))
        rows = [[key[0], f"{gm.mean:.4f}", str(gm.count)] for key, gm in ordered]
        click.echo(_format_table(["Model", "Mean score", "N"], rows))
    else:
        pretty = SUBJECT_TITLES if group_by == "subject" else {}
        rows = [
            [key[0], pretty.get(key[1], key[1]), f"{gm.mean:.4f}", str(gm.count)]
            for key, gm in sorted(groups.items())
        ]
        click.echo(_format_table(["Model", group_by.capitalize(), "Mean score", "N"], rows))


@main.command()
@click.argument("source", type=click.File("r", encoding="utf-8"), default="-")
def tags(source) -> None:
    """Print the tag stream of a Markdown document, one token per line."""
    analysis = analyze_document(source.read())
    for token in analysis.tags:
        click.echo(token.debug())
    if analysis.unterminated_math:
        click.echo(f"unterminated math openers: {analysis.unterminated_math}", err=True)


@main.command()
@click.option("--port", default=8040, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--responses-dir", default="run", show_default=True,
              help="Directory with responses.jsonl (and tasks.jsonl for prompts).")
@click.option("--votes-out", default=None, help="Vote log path [default: RESPONSES_DIR/votes.jsonl].")
@click.option("--ttl-seconds", default=1800, show_default=True, help="Pair ticket lifetime.")
@click.option("--ci-interval", default=10, show_default=True,
              help="Recompute bootstrap intervals every N votes.")
@click.option("--seed", default=0, show_default=True)
@click.option("--cors-origin", multiple=True, help="Allowed browser origin (repeatable).")
@click.option("--static-dir", default=None,
              help="Built voting UI to serve at /, e.g. frontend/dist.")
def serve(
    port: int, host: str, responses_dir: str, votes_out: str | None,
    ttl_seconds: int, ci_interval: int, seed: int, cors_origin: tuple[str, ...],
    static_dir: str | None,
) -> None:
    """Run the pairwise voting service."""
    import uvicorn

    from .service import create_app

    base = Path(responses_dir)
    _require_store(base / "responses.jsonl", "generate")
    if static_dir is not None and not Path(static_dir).is_dir():
        raise _fatal(f"static dir {static_dir} does not exist; build the UI first")
    app = create_app(
        responses_path=base / "responses.jsonl",
        votes_path=Path(votes_out) if votes_out else base / "votes.jsonl",
        tasks_path=base / "tasks.jsonl",
        ttl_seconds=ttl_seconds,
        ci_interval=ci_interval,
        seed=seed,
        cors_origins=list(cors_origin),
        static_dir=Path(static_dir) if static_dir else None,
    )
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()

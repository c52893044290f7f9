"""Record types and line-delimited JSON persistence.

Four record kinds flow through the pipeline: tasks, responses (generated
and rewritten), scores, and votes.  Each store is a file of one JSON
object per line.  Unknown fields are preserved on read (in ``extra``) and
dropped on write; field names on the wire are part of the contract.

Appends are atomic at line granularity within one process; cross-process
locking is out of scope.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

SUBJECTS = (
    "business-economics",
    "social-sciences-human-rights",
    "environment-sustainability",
    "science-technology",
    "law-international-relations",
    "history-geography-culture",
    "education-learning",
    "health-wellness-fitness",
    "morals-ethics",
    "psychology-behavioral-sciences",
)

SUBJECT_TITLES = {
    "business-economics": "Business and Economics",
    "social-sciences-human-rights": "Social Sciences and Human Rights",
    "environment-sustainability": "Environment and Sustainability",
    "science-technology": "Science and Technology",
    "law-international-relations": "Law, Legal Studies and International Relations",
    "history-geography-culture": "History, Geography and Cultural Studies",
    "education-learning": "Education and Learning",
    "health-wellness-fitness": "Health, Wellness and Fitness",
    "morals-ethics": "Morals and Ethics",
    "psychology-behavioral-sciences": "Psychology and Behavioral Sciences",
}

LANGUAGES = ("en", "zh")
PHASES = ("generated", "rewritten")
METRICS = ("mdeval", "drule", "pllm", "rllm")
OUTCOMES = ("W", "L", "T")


def _require_str(obj: Mapping[str, Any], key: str) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or not value:
        raise ValueError(f"field {key!r} must be a non-empty string, got {value!r}")
    return value


def _require_int(obj: Mapping[str, Any], key: str) -> int:
    value = obj.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ValueError(f"field {key!r} must be an integer, got {value!r}")
    return value


def _extras(obj: Mapping[str, Any], known: Sequence[str]) -> dict[str, Any]:
    return {k: v for k, v in obj.items() if k not in known}


@dataclass(frozen=True)
class TaskRecord:
    """One benchmark prompt."""

    task_id: str
    prompt: str
    subject: str
    language: str
    extra: Mapping[str, Any] = field(default_factory=dict, compare=False)

    _FIELDS = ("task_id", "prompt", "subject", "language")

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "TaskRecord":
        record = cls(
            task_id=_require_str(obj, "task_id"),
            prompt=_require_str(obj, "prompt"),
            subject=_require_str(obj, "subject"),
            language=_require_str(obj, "language"),
            extra=_extras(obj, cls._FIELDS),
        )
        if record.subject not in SUBJECTS:
            raise ValueError(f"unknown subject {record.subject!r}")
        if record.language not in LANGUAGES:
            raise ValueError(f"unknown language {record.language!r}")
        return record

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "prompt": self.prompt,
            "subject": self.subject,
            "language": self.language,
        }


@dataclass(frozen=True)
class ResponseRecord:
    """Model output for a task: either the raw generation or its rewrite.

    ``judge`` names the rewriting model and is set exactly when phase is
    "rewritten".  ``created_at`` is integer milliseconds since epoch.
    """

    task_id: str
    model: str
    phase: str
    text: str
    judge: str | None = None
    created_at: int = 0
    extra: Mapping[str, Any] = field(default_factory=dict, compare=False)

    _FIELDS = ("task_id", "model", "phase", "text", "judge", "created_at")

    def __post_init__(self) -> None:
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if (self.phase == "rewritten") != bool(self.judge):
            raise ValueError(f"judge must be set exactly for rewritten records, got phase={self.phase!r} judge={self.judge!r}")

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ResponseRecord":
        text = obj.get("text")
        if not isinstance(text, str):
            raise ValueError(f"field 'text' must be a string, got {text!r}")
        judge = obj.get("judge")
        if judge is not None and not isinstance(judge, str):
            raise ValueError(f"field 'judge' must be a string when present, got {judge!r}")
        return cls(
            task_id=_require_str(obj, "task_id"),
            model=_require_str(obj, "model"),
            phase=_require_str(obj, "phase"),
            text=text,
            judge=judge,
            created_at=_require_int(obj, "created_at"),
            extra=_extras(obj, cls._FIELDS),
        )

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "task_id": self.task_id,
            "model": self.model,
            "phase": self.phase,
            "text": self.text,
        }
        if self.judge is not None:
            out["judge"] = self.judge
        out["created_at"] = self.created_at
        return out


@dataclass(frozen=True)
class ScoreRecord:
    """One metric value for a (task, model) pair.

    ``config_hash`` binds the value to the exact scoring configuration;
    ``detail`` carries metric-specific audit fields.
    """

    task_id: str
    model: str
    metric: str
    value: float
    detail: Mapping[str, Any] = field(default_factory=dict)
    config_hash: str = ""

    _FIELDS = ("task_id", "model", "metric", "value", "detail", "config_hash")

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"value must lie in [0, 1], got {self.value!r}")

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ScoreRecord":
        value = obj.get("value")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValueError(f"field 'value' must be a number, got {value!r}")
        detail = obj.get("detail", {})
        if not isinstance(detail, Mapping):
            raise ValueError(f"field 'detail' must be an object, got {detail!r}")
        return cls(
            task_id=_require_str(obj, "task_id"),
            model=_require_str(obj, "model"),
            metric=_require_str(obj, "metric"),
            value=float(value),
            detail=dict(detail),
            config_hash=str(obj.get("config_hash", "")),
        )

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "model": self.model,
            "metric": self.metric,
            "value": self.value,
            "detail": dict(self.detail),
            "config_hash": self.config_hash,
        }


@dataclass(frozen=True)
class VoteRecord:
    """One pairwise human judgment.

    W means model_i preferred, L means model_j preferred, T is a tie.
    ``ts`` is a monotone sequence number deciding replay order.
    """

    task_id: str
    model_i: str
    model_j: str
    outcome: str
    ts: int = 0
    extra: Mapping[str, Any] = field(default_factory=dict, compare=False)

    _FIELDS = ("task_id", "model_i", "model_j", "outcome", "ts")

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "VoteRecord":
        record = cls(
            task_id=_require_str(obj, "task_id"),
            model_i=_require_str(obj, "model_i"),
            model_j=_require_str(obj, "model_j"),
            outcome=_require_str(obj, "outcome"),
            ts=_require_int(obj, "ts"),
            extra=_extras(obj, cls._FIELDS),
        )
        if record.outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {record.outcome!r}")
        if record.model_i == record.model_j:
            raise ValueError(f"vote pits {record.model_i!r} against itself")
        return record

    def to_json(self) -> dict[str, Any]:
        return {
            "task_id": self.task_id,
            "model_i": self.model_i,
            "model_j": self.model_j,
            "outcome": self.outcome,
            "ts": self.ts,
        }


@dataclass(frozen=True)
class LineError:
    line_number: int
    message: str


def _read_records(path: Path, record_type) -> tuple[list[tuple[int, Any]], list[LineError]]:
    numbered: list[tuple[int, Any]] = []
    errors: list[LineError] = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                numbered.append((line_number, record_type.from_json(json.loads(line))))
            except (json.JSONDecodeError, ValueError) as exc:
                errors.append(LineError(line_number, str(exc)))
    return numbered, errors


@dataclass(frozen=True)
class TaskLoadResult:
    records: list[TaskRecord]
    errors: list[LineError]


def load_tasks(path: str | Path) -> TaskLoadResult:
    """Read a task file, collecting per-line errors instead of raising.

    Duplicate task ids are errors naming both line numbers; the first
    occurrence stays in the result.
    """
    numbered, errors = _read_records(Path(path), TaskRecord)
    seen: dict[str, int] = {}
    unique: list[TaskRecord] = []
    for line_number, record in numbered:
        first = seen.get(record.task_id)
        if first is not None:
            errors.append(
                LineError(line_number, f"duplicate task_id {record.task_id!r} on lines {first} and {line_number}")
            )
            continue
        seen[record.task_id] = line_number
        unique.append(record)
    return TaskLoadResult(unique, sorted(errors, key=lambda e: e.line_number))


class JsonlStore:
    """Append-only store of one record kind, one JSON object per line.

    Each append is a single O_APPEND write of a full line, serialized by a
    lock, so concurrent appends from one process can interleave only whole
    lines.  On first open a torn tail left by a crash is terminated with a
    newline; the torn fragment then fails to parse and is skipped (with a
    warning) by scans, never read back as a valid record.
    """

    def __init__(self, path: str | Path, record_type):
        self.path = Path(path)
        self.record_type = record_type
        self._lock = threading.Lock()
        self._fd: int | None = None

    def _ensure_open(self) -> None:
        if self._fd is not None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fd = os.open(self.path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
        if self.path.stat().st_size > 0:
            with open(self.path, "rb") as fh:
                fh.seek(-1, os.SEEK_END)
                if fh.read(1) != b"\n":
                    os.write(self._fd, b"\n")

    def append(self, record) -> None:
        payload = (json.dumps(record.to_json(), ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")
        with self._lock:
            self._ensure_open()
            written = os.write(self._fd, payload)
            if written != len(payload):
                raise OSError(f"short write to {self.path}: {written} of {len(payload)} bytes")

    def scan(self, **filters) -> list:
        """Records matching all given field=value filters, in file order.

        A filter value of None means "no constraint".  Unparseable lines
        are skipped with a warning.
        """
        allowed = set(self.record_type._FIELDS)
        unknown = set(filters) - allowed
        if unknown:
            raise TypeError(f"unknown filter fields {sorted(unknown)} for {self.record_type.__name__}")
        if not self.path.exists():
            logger.warning("store %s does not exist; scan returns nothing", self.path)
            return []
        numbered, errors = _read_records(self.path, self.record_type)
        for error in errors:
            logger.warning("%s line %d skipped: %s", self.path, error.line_number, error.message)
        active = {k: v for k, v in filters.items() if v is not None}
        return [r for _, r in numbered if all(getattr(r, k) == v for k, v in active.items())]

    def close(self) -> None:
        with self._lock:
            if self._fd is not None:
                os.close(self._fd)
                self._fd = None

    def __enter__(self) -> "JsonlStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True)
class GroupMean:
    mean: float
    count: int


def mean_scores(
    scores: Iterable[ScoreRecord],
    group_by: Sequence[str] = ("model",),
    tasks: Mapping[str, TaskRecord] | None = None,
) -> dict[tuple[str, ...], GroupMean]:
    """Arithmetic mean of score values per group.

    Valid groupings are {model}, {model, subject}, and {model, language};
    the latter two need the task table to resolve task metadata.  Keys of
    the result are (model,) or (model, subject-or-language) tuples.
    """
    wanted = frozenset(group_by)
    if wanted not in ({"model"}, {"model", "subject"}, {"model", "language"}):
        raise ValueError(f"unsupported grouping {sorted(wanted)}")
    meta = next(iter(wanted - {"model"}), None)
    if meta is not None and tasks is None:
        raise ValueError(f"grouping by {meta} requires the task table")

    sums: dict[tuple[str, ...], float] = {}
    counts: dict[tuple[str, ...], int] = {}
    for score in scores:
        key: tuple[str, ...]
        if meta is None:
            key = (score.model,)
        else:
            task = tasks.get(score.task_id)  # type: ignore[union-attr]
            if task is None:
                raise ValueError(f"score references unknown task {score.task_id!r}")
            key = (score.model, getattr(task, meta))
        sums[key] = sums.get(key, 0.0) + score.value
        counts[key] = counts.get(key, 0) + 1
    if not counts:
        raise ValueError("empty score set")
    return {key: GroupMean(sums[key] / counts[key], counts[key]) for key in sorted(counts)}


def fingerprint(payload: Mapping[str, Any]) -> str:
    """Short stable hash of a JSON-ready mapping, for config binding."""
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

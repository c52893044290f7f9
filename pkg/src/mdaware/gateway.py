"""Generation, rewriting, and judge scoring over chat-completion endpoints.

Any endpoint speaking the de-facto chat-completions JSON shape works.  API
keys come from a named environment variable only, never from files or
flags.  ``mock://`` endpoints provide deterministic offline stand-ins for
the whole pipeline, used by the test suite and usable for dry runs.

The rewrite prompt is a fixed template with one ``{text}`` slot; one judge
endpoint and one template serve a whole run, and both are hashed into the
scores they produce.
"""

from __future__ import annotations

import json
import logging
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence, TypeVar
from urllib.parse import parse_qs, urlsplit

import httpx

from .corpus import ResponseRecord, ScoreRecord, TaskRecord, fingerprint

logger = logging.getLogger(__name__)

REWRITE_TEMPLATE = (
    "Given the text below, rewrite it using Markdown format to make the output "
    "more structured, and increase the readability. \n\n"
    "Note that if possible, keep the content the same, just adjust the formatting.\n"
    "###\n"
    "{text}"
)

PLLM_PROMPT = (
    "Rate how well the response below uses Markdown formatting to structure its "
    "content, on a scale from 0 to 1. Reply with JSON of the form "
    '{"score": x}.\n'
    "### Response\n"
    "{response}"
)

RLLM_PROMPT = (
    "Rate how well the response below uses Markdown formatting to structure its "
    "content, on a scale from 0 to 1, taking the reference as the formatting "
    "standard for this task. Reply with JSON of the form "
    '{"score": x}.\n'
    "### Reference\n"
    "{reference}\n"
    "### Response\n"
    "{response}"
)

_SCORE_SCHEMA = {
    "type": "json_schema",
    "json_schema": {
        "name": "markdown_score",
        "strict": True,
        "schema": {
            "type": "object",
            "properties": {"score": {"type": "number"}},
            "required": ["score"],
            "additionalProperties": False,
        },
    },
}

_RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


class GatewayError(RuntimeError):
    pass


class JudgeParseError(GatewayError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    """One chat endpoint.  ``name`` is the identifier stored in records and
    defaults to ``model_name``; ``headers`` values may carry an
    ``{api_key}`` slot for providers with non-Bearer auth."""

    base_url: str
    model_name: str
    api_key_env: str = ""
    temperature: float = 1.0
    max_retries: int = 3
    request_timeout: float = 60.0
    max_concurrency: int = 4
    name: str = ""
    headers: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_concurrency < 1:
            raise ValueError(f"max_concurrency must be at least 1, got {self.max_concurrency}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be non-negative, got {self.temperature}")

    @property
    def record_name(self) -> str:
        return self.name or self.model_name

    def api_key(self) -> str:
        if not self.api_key_env:
            return ""
        key = os.environ.get(self.api_key_env)
        if key is None:
            raise GatewayError(f"environment variable {self.api_key_env} is not set")
        return key

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "EndpointConfig":
        known = {f: obj[f] for f in (
            "base_url", "model_name", "api_key_env", "temperature", "max_retries",
            "request_timeout", "max_concurrency", "name", "headers",
        ) if f in obj}
        for required in ("base_url", "model_name"):
            if not known.get(required):
                raise ValueError(f"endpoint config needs a non-empty {required!r}")
        return cls(**known)


@dataclass(frozen=True)
class RewritePrompt:
    """The rewrite instruction; exactly one {text} slot."""

    template: str = REWRITE_TEMPLATE

    def __post_init__(self) -> None:
        if self.template.count("{text}") != 1:
            raise ValueError("template must contain exactly one {text} slot")

    def render(self, text: str) -> str:
        return self.template.replace("{text}", text)

    def hash(self) -> str:
        return fingerprint({"template": self.template})


@dataclass(frozen=True)
class Completion:
    text: str
    retries: int
    latency_ms: int


class ChatClient(Protocol):
    def complete(
        self,
        messages: Sequence[Mapping[str, str]],
        *,
        temperature: float,
        response_format: Mapping[str, Any] | None = None,
    ) -> Completion: ...


class HttpChatClient:
    """Blocking chat-completions client with exponential backoff.

    Transient failures (transport errors and 429/5xx) are retried up to
    max_retries with doubling backoff plus jitter; anything else surfaces
    immediately.
    """

    def __init__(
        self,
        endpoint: EndpointConfig,
        transport: httpx.BaseTransport | None = None,
        backoff_base: float = 0.5,
    ):
        self.endpoint = endpoint
        self.backoff_base = backoff_base
        self._client = httpx.Client(timeout=endpoint.request_timeout, transport=transport)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "HttpChatClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _headers(self) -> dict[str, str]:
        key = self.endpoint.api_key()
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        for name, template in self.endpoint.headers.items():
            headers[name] = template.replace("{api_key}", key)
        return headers

    def complete(
        self,
        messages: Sequence[Mapping[str, str]],
        *,
        temperature: float,
        response_format: Mapping[str, Any] | None = None,
    ) -> Completion:
        url = self.endpoint.base_url.rstrip("/") + "/chat/completions"
        payload: dict[str, Any] = {
            "model": self.endpoint.model_name,
            "messages": list(messages),
            "temperature": temperature,
        }
        if response_format is not None:
            payload["response_format"] = response_format
        headers = self._headers()
        start = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            if attempt:
                backoff = self.backoff_base * 2 ** (attempt - 1)
                time.sleep(backoff + random.uniform(0, backoff / 4))
            try:
                response = self._client.post(url, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if response.status_code in _RETRY_STATUSES:
                last_error = GatewayError(f"HTTP {response.status_code} from {url}")
                continue
            if response.status_code != 200:
                raise GatewayError(f"HTTP {response.status_code} from {url}: {response.text[:200]}")
            try:
                text = response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, json.JSONDecodeError) as exc:
                raise GatewayError(f"malformed completion payload from {url}: {exc}") from exc
            latency = int((time.monotonic() - start) * 1000)
            if attempt:
                logger.info("%s succeeded after %d retries", url, attempt)
            return Completion(text if isinstance(text, str) else "", attempt, latency)
        raise GatewayError(
            f"giving up on {url} after {self.endpoint.max_retries} retries: {last_error}"
        ) from last_error


def _styled_response(prompt: str, level: int) -> str:
    """Deterministic answer whose structural richness grows with level."""
    parts = [f"Answer for: {prompt}"]
    blocks = [
        "## Key points",
        "- first point\n- second point",
        "**Important:** check the steps.",
        "```\nexample code\n```",
        "| a | b |\n|---|---|\n| 1 | 2 |",
    ]
    parts += blocks[: max(0, level)]
    return "\n\n".join(parts)


class MockChatClient:
    """Deterministic offline endpoints for tests and dry runs.

    Kinds: ``mock://echo`` returns the last user message; ``mock://identity-judge``
    returns the text after the first ``###`` line (a rewrite that changes
    nothing); ``mock://enrich-judge`` prepends a heading to that text;
    ``mock://styler?level=N`` answers prompts with level-graded structure;
    ``mock://score?value=X`` returns a score payload; ``mock://fixed?text=T``
    returns T verbatim.
    """

    def __init__(self, kind: str, params: Mapping[str, str]):
        self.kind = kind
        self.params = params

    @classmethod
    def from_url(cls, url: str) -> "MockChatClient":
        parts = urlsplit(url)
        params = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        return cls(parts.netloc, params)

    @staticmethod
    def _slot_text(content: str) -> str:
        marker = "###\n"
        position = content.find(marker)
        return content[position + len(marker):] if position >= 0 else content

    def complete(
        self,
        messages: Sequence[Mapping[str, str]],
        *,
        temperature: float,
        response_format: Mapping[str, Any] | None = None,
    ) -> Completion:
        content = messages[-1]["content"]
        if self.kind == "echo":
            text = content
        elif self.kind == "identity-judge":
            text = self._slot_text(content)
        elif self.kind == "enrich-judge":
            text = "# Summary\n\n" + self._slot_text(content)
        elif self.kind == "styler":
            text = _styled_response(content, int(self.params.get("level", "0")))
        elif self.kind == "score":
            text = json.dumps({"score": float(self.params.get("value", "0.5"))})
        elif self.kind == "fixed":
            text = self.params.get("text", "")
        else:
            raise GatewayError(f"unknown mock endpoint kind {self.kind!r}")
        return Completion(text, 0, 0)


def client_for(endpoint: EndpointConfig, transport: httpx.BaseTransport | None = None) -> ChatClient:
    if endpoint.base_url.startswith("mock:"):
        return MockChatClient.from_url(endpoint.base_url)
    return HttpChatClient(endpoint, transport)


def _now_ms() -> int:
    return int(time.time() * 1000)


def _alnum_count(text: str) -> int:
    return sum(1 for c in text if c.isalnum())


def generate(task: TaskRecord, endpoint: EndpointConfig, client: ChatClient | None = None) -> ResponseRecord:
    """Phase 1: ask the model the task prompt, verbatim.

    No system prompt and no formatting instruction are added; the structure
    of the answer must reflect the model's own habit.
    """
    client = client or client_for(endpoint)
    messages = [{"role": "user", "content": task.prompt}]
    try:
        completion = client.complete(messages, temperature=endpoint.temperature)
    except GatewayError as exc:
        raise GatewayError(f"task {task.task_id}: {exc}") from exc
    if not completion.text:
        logger.warning("empty completion for task %s model %s", task.task_id, endpoint.record_name)
    if completion.retries:
        logger.info("task %s model %s needed %d retries", task.task_id, endpoint.record_name, completion.retries)
    return ResponseRecord(
        task_id=task.task_id,
        model=endpoint.record_name,
        phase="generated",
        text=completion.text,
        created_at=_now_ms(),
    )


def rewrite(
    response: ResponseRecord,
    judge_endpoint: EndpointConfig,
    prompt: RewritePrompt = RewritePrompt(),
    client: ChatClient | None = None,
) -> ResponseRecord:
    """Phase 2: the judge restyles the response; output becomes the
    model-dependent reference for scoring.

    Warns (never fails) when the rewrite's alphanumeric character count
    drifts more than 40% from the original's, or when the original has no
    alphanumeric content to compare at all.
    """
    if response.phase != "generated":
        raise ValueError(f"can only rewrite generated responses, got phase {response.phase!r}")
    client = client or client_for(judge_endpoint)
    messages = [{"role": "user", "content": prompt.render(response.text)}]
    try:
        completion = client.complete(messages, temperature=judge_endpoint.temperature)
    except GatewayError as exc:
        raise GatewayError(f"task {response.task_id}: {exc}") from exc
    original = _alnum_count(response.text)
    rewritten = _alnum_count(completion.text)
    if original == 0 or abs(rewritten - original) > 0.4 * original:
        logger.warning(
            "content drift for task %s model %s: %d -> %d alphanumeric characters",
            response.task_id, response.model, original, rewritten,
        )
    return ResponseRecord(
        task_id=response.task_id,
        model=response.model,
        phase="rewritten",
        text=completion.text,
        judge=judge_endpoint.record_name,
        created_at=_now_ms(),
    )


_NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def _parse_judge_score(payload: str) -> tuple[float, str] | None:
    try:
        data = json.loads(payload)
    except json.JSONDecodeError:
        data = None
    if isinstance(data, Mapping) and isinstance(data.get("score"), (int, float)):
        return float(data["score"]), "schema"
    match = _NUMBER.search(payload)
    if match:
        return float(match.group()), "regex"
    return None


def _judge_score(
    prompt_text: str,
    judge_endpoint: EndpointConfig,
    client: ChatClient | None,
    metric: str,
    response: ResponseRecord,
    extra_detail: Mapping[str, Any],
) -> ScoreRecord:
    client = client or client_for(judge_endpoint)
    messages = [{"role": "user", "content": prompt_text}]
    payload = ""
    for _ in range(judge_endpoint.max_retries + 1):
        completion = client.complete(
            messages, temperature=judge_endpoint.temperature, response_format=_SCORE_SCHEMA
        )
        payload = completion.text
        parsed = _parse_judge_score(payload)
        if parsed is not None:
            break
    else:
        raise JudgeParseError(
            f"task {response.task_id} model {response.model}: no numeric score in judge payload {payload!r}"
        )
    raw, how = parsed
    value = min(1.0, max(0.0, raw))
    detail: dict[str, Any] = {"judge_payload": payload, "parse": how, **extra_detail}
    if value != raw:
        detail["clamped"] = True
        detail["raw_value"] = raw
        logger.warning(
            "judge score %s for task %s model %s clamped to %s", raw, response.task_id, response.model, value
        )
    config_hash = fingerprint({
        "metric": metric,
        "judge": judge_endpoint.model_name,
        "temperature": judge_endpoint.temperature,
    })
    return ScoreRecord(
        task_id=response.task_id,
        model=response.model,
        metric=metric,
        value=value,
        detail=detail,
        config_hash=config_hash,
    )


def judge_score_pllm(
    response: ResponseRecord,
    judge_endpoint: EndpointConfig,
    client: ChatClient | None = None,
) -> ScoreRecord:
    """Judge-only score of Markdown quality, no reference in the prompt."""
    prompt_text = PLLM_PROMPT.replace("{response}", response.text)
    return _judge_score(prompt_text, judge_endpoint, client, "pllm", response, {})


def judge_score_rllm(
    response: ResponseRecord,
    reference: ResponseRecord | None,
    judge_endpoint: EndpointConfig,
    client: ChatClient | None = None,
) -> ScoreRecord:
    """Judge score with the rewrite reference embedded in the prompt."""
    if reference is None or not reference.text:
        raise ValueError(f"task {response.task_id}: no reference for model {response.model}")
    prompt_text = RLLM_PROMPT.replace("{reference}", reference.text).replace("{response}", response.text)
    extra = {"response_text": response.text, "reference_text": reference.text}
    return _judge_score(prompt_text, judge_endpoint, client, "rllm", response, extra)


T = TypeVar("T")
R = TypeVar("R")


def run_concurrently(
    fn: Callable[[T], R],
    items: Iterable[T],
    max_concurrency: int,
) -> list[tuple[T, R | None, Exception | None]]:
    """Apply fn to every item with a hard cap on in-flight calls.

    Results keep input order; each entry is (item, result, error) with
    exactly one of result/error set.
    """
    items = list(items)
    out: list[tuple[T, R | None, Exception | None]] = []
    with ThreadPoolExecutor(max_workers=max_concurrency) as pool:
        futures = [pool.submit(fn, item) for item in items]
        for item, future in zip(items, futures):
            try:
                out.append((item, future.result(), None))
            except Exception as exc:  # collected, not raised: partial progress is reported
                out.append((item, None, exc))
    return out

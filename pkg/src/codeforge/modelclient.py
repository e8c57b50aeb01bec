"""Teacher/student completion backends.

Two interchangeable backends sit behind ``CompletionBackend``: a remote
chat-completion client with retry/backoff, and a deterministic scripted
backend for offline runs and CI. Fixtures can be recorded from a prior
run's session log and replayed bit-exactly.

The remote request body is built from a config asset
(``assets/chat_completion_body.json``), not hardcoded, so deployments can
reshape it without touching code. Credentials come from ``MODEL_API_BASE``
and ``MODEL_API_KEY``.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Sequence

from .model import InvariantError

log = logging.getLogger(__name__)


class BackendUnavailable(RuntimeError):
    """The backend cannot produce a completion (after retries, if remote)."""


class ContextTooLong(RuntimeError):
    """The prompt exceeds the model context; callers truncate history."""


class LogCorrupt(ValueError):
    """A session log could not be parsed back into a fixture."""


class ReasoningEffort(enum.Enum):
    LOW = "low"
    HIGH = "high"


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 1.0
    max_tokens: int = 8192
    reasoning_effort: ReasoningEffort = ReasoningEffort.LOW
    model_name: str = "default"

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise InvariantError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise InvariantError("max_tokens must be > 0")


# Generation-time roles: the teacher reasons hard about problem design,
# the same model in low effort plays the student.
TEACHER_DEFAULTS = CompletionParams(temperature=1.0, reasoning_effort=ReasoningEffort.HIGH)
STUDENT_DEFAULTS = CompletionParams(temperature=1.0, reasoning_effort=ReasoningEffort.LOW)


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class CompletionBackend:
    def complete(self, prompt: str, params: CompletionParams) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class FixtureEntry:
    """One scripted response.

    ``match`` selects prompts: None matches anything, ``digest:<hex>``
    matches the prompt digest, ``contains:<text>`` matches a substring.
    ``times`` caps how often the entry fires (None = unbounded).
    """

    response: str
    match: Optional[str] = None
    times: Optional[int] = 1

    def matches(self, prompt: str) -> bool:
        if self.match is None or self.match == "any":
            return True
        if self.match.startswith("digest:"):
            return prompt_digest(prompt) == self.match[len("digest:"):]
        if self.match.startswith("contains:"):
            return self.match[len("contains:"):] in prompt
        raise InvariantError(f"unknown match kind: {self.match!r}")


@dataclass
class ScriptedFixture:
    entries: list[FixtureEntry] = field(default_factory=list)

    def add(self, response: str, match: Optional[str] = None, times: Optional[int] = 1) -> None:
        self.entries.append(FixtureEntry(response=response, match=match, times=times))

    def __len__(self) -> int:
        return len(self.entries)


class ScriptedBackend(CompletionBackend):
    """Deterministic playback of a fixture.

    Entries are consulted in order; the first live entry whose match
    accepts the prompt is consumed. Exhausting the script raises
    BackendUnavailable — a scripted run asking one question too many is a
    fixture bug, not something to mask.
    """

    def __init__(self, fixture: ScriptedFixture):
        self._entries = [[e, e.times] for e in fixture.entries]
        self._lock = threading.Lock()
        self.calls = 0

    def complete(self, prompt: str, params: CompletionParams) -> str:
        with self._lock:
            self.calls += 1
            for slot in self._entries:
                entry, remaining = slot
                if remaining is not None and remaining <= 0:
                    continue
                if entry.matches(prompt):
                    if remaining is not None:
                        slot[1] = remaining - 1
                    log.debug("scripted hit for prompt %s", prompt_digest(prompt)[:12])
                    return entry.response
        raise BackendUnavailable(
            f"fixture exhausted for prompt {prompt_digest(prompt)[:12]}"
        )


def _load_body_template() -> dict:
    path = resources.files("codeforge").joinpath("assets/chat_completion_body.json")
    with path.open("r", encoding="utf-8") as fh:
        return json.load(fh)


def _fill(template, values: dict):
    if isinstance(template, str) and template.startswith("$"):
        return values[template[1:]]
    if isinstance(template, dict):
        return {k: _fill(v, values) for k, v in template.items()}
    if isinstance(template, list):
        return [_fill(v, values) for v in template]
    return template


RETRY_LIMIT = 5
BACKOFF_BASE_S = 1.0
BACKOFF_CAP_S = 32.0


class RemoteBackend(CompletionBackend):
    """HTTP chat-completion client.

    Transient failures (429, 5xx, connection errors) retry up to 5 times
    with exponential backoff (base 1 s, cap 32 s) plus jitter; other 4xx
    statuses fail immediately. A context-length rejection surfaces as
    ContextTooLong so the caller can trim its conditioning text.
    """

    def __init__(
        self,
        api_base: Optional[str] = None,
        api_key: Optional[str] = None,
        max_concurrency: int = 8,
        sleep_fn: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        import os

        import requests

        self._session = requests.Session()
        self._api_base = (api_base or os.environ.get("MODEL_API_BASE") or "").rstrip("/")
        if not self._api_base:
            raise BackendUnavailable("MODEL_API_BASE is not configured")
        api_key = api_key or os.environ.get("MODEL_API_KEY")
        if api_key:
            self._session.headers["Authorization"] = f"Bearer {api_key}"
        self._gate = threading.Semaphore(max_concurrency)
        self._sleep = sleep_fn
        self._rng = rng or random.Random()
        self._template = _load_body_template()

    def complete(self, prompt: str, params: CompletionParams) -> str:
        import requests

        body = _fill(
            self._template,
            {
                "model": params.model_name,
                "prompt": prompt,
                "temperature": params.temperature,
                "max_tokens": params.max_tokens,
                "reasoning_effort": params.reasoning_effort.value,
            },
        )
        url = f"{self._api_base}/chat/completions"
        last_error = "no attempt made"
        for attempt in range(RETRY_LIMIT + 1):
            if attempt:
                delay = min(BACKOFF_CAP_S, BACKOFF_BASE_S * 2 ** (attempt - 1))
                self._sleep(delay * (0.5 + self._rng.random()))
            try:
                with self._gate:
                    resp = self._session.post(url, json=body, timeout=120)
            except requests.RequestException as exc:
                last_error = f"connection error: {exc}"
                continue
            if resp.status_code == 200:
                text = resp.json()["choices"][0]["message"]["content"]
                log.debug(
                    "completion %s -> %s",
                    prompt_digest(prompt)[:12],
                    prompt_digest(text)[:12],
                )
                return text
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"transient status {resp.status_code}"
                continue
            if _is_context_overflow(resp):
                raise ContextTooLong(f"status {resp.status_code}: {resp.text[:200]}")
            raise BackendUnavailable(f"status {resp.status_code}: {resp.text[:200]}")
        raise BackendUnavailable(f"retries exhausted: {last_error}")


def _is_context_overflow(resp) -> bool:
    if resp.status_code != 400:
        return False
    text = resp.text.lower()
    return "context" in text and ("length" in text or "too long" in text or "maximum" in text)


# --- session logs and replay ------------------------------------------------


def log_completion(path: str, role: str, prompt: str, response: str) -> None:
    """Append one prompt/response event to a session log."""
    event = {
        "event": "completion",
        "role": role,
        "prompt_digest": prompt_digest(prompt),
        "response": response,
    }
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(event, ensure_ascii=False) + "\n")


def record_replay(log_lines: Sequence[str] | str, role: Optional[str] = None) -> ScriptedFixture:
    """Build a fixture replaying a prior run from its session log.

    Accepts a path or the log lines themselves; ``role`` filters to one of
    the logged roles (teacher/student). Responses are keyed by prompt
    digest, so replay does not depend on call ordering.
    """
    if isinstance(log_lines, str):
        with open(log_lines, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    else:
        lines = list(log_lines)
    fixture = ScriptedFixture()
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            event = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogCorrupt(f"line {lineno}: {exc}") from None
        if not isinstance(event, dict) or event.get("event") != "completion":
            continue
        try:
            if role is not None and event["role"] != role:
                continue
            fixture.add(
                response=event["response"],
                match=f"digest:{event['prompt_digest']}",
                times=1,
            )
        except KeyError as exc:
            raise LogCorrupt(f"line {lineno}: missing field {exc}") from None
    return fixture

"""Pluggable chat-completion clients for LLM and VLM backends.

Every pipeline stage takes a client handle rather than a hardwired backend,
so the whole pipeline runs on deterministic stubs in tests and on a remote
chat-completion HTTP API in production. The client layer adds disk caching,
bounded concurrency, and retries on top of whichever backend is configured.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests


class ClientError(Exception):
    pass


class BackendError(ClientError):
    """Backend failed: network error, bad status, refusal, or stub fault."""


class AuthError(BackendError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str
    image_ref: str | None = None

    def to_dict(self) -> dict:
        out = {"role": self.role, "content": self.content}
        if self.image_ref is not None:
            out["image_ref"] = self.image_ref
        return out


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    model_id: str = "default"

    def __post_init__(self):
        if not self.messages:
            raise ValueError("ChatRequest needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        for msg in self.messages:
            if msg.image_ref is not None and msg.role != "user":
                raise ValueError("image_ref is only allowed on user messages")

    def last_user_content(self) -> str:
        for msg in reversed(self.messages):
            if msg.role == "user":
                return msg.content
        return ""

    def image_ref(self) -> str | None:
        for msg in self.messages:
            if msg.image_ref is not None:
                return msg.image_ref
        return None

    def cache_key(self) -> str:
        """Content hash of the full request; any field change changes the key."""
        payload = {
            "messages": [m.to_dict() for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "model_id": self.model_id,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def user_request(content: str, image_ref: str | None = None, **kwargs) -> ChatRequest:
    return ChatRequest(messages=(ChatMessage("user", content, image_ref),), **kwargs)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff: tuple[float, ...] = (0.5, 1.0, 2.0)

    def delay(self, attempt: int) -> float:
        if not self.backoff:
            return 0.0
        return self.backoff[min(attempt, len(self.backoff) - 1)]


@dataclass
class ClientConfig:
    endpoint: str = ""
    api_key_env: str = "VLMPREP_API_KEY"
    max_in_flight: int = 4
    cache_dir: str | None = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    model_id: str = "default"

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


class Backend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class StubBackend:
    """Deterministic in-process backend for tests and offline pipeline runs.

    Resolution order for a request: an explicit ``responder`` callable, then
    the exact-match ``table`` on the last user message, then the first
    matching substring rule, then ``template``. Rules and templates may use
    ``{last_user}``, ``{image_ref}``, and ``{tail}`` placeholders (``tail``
    is the text after the last blank line, i.e. the payload following an
    instruction block) so behaviour stays data, not code. ``fail_contains``
    simulates backend faults.
    """

    def __init__(
        self,
        table: dict[str, str] | None = None,
        rules: Sequence[tuple[str, str]] = (),
        template: str | None = None,
        responder: Callable[[ChatRequest], str] | None = None,
        fail_contains: Sequence[str] = (),
        delay: float = 0.0,
    ):
        self.table = dict(table or {})
        self.rules = list(rules)
        self.template = template
        self.responder = responder
        self.fail_contains = tuple(fail_contains)
        self.delay = delay
        self.calls: list[ChatRequest] = []
        self._lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight_seen = 0

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def _fill(self, template: str, request: ChatRequest) -> str:
        last = request.last_user_content()
        return template.format(
            last_user=last,
            image_ref=request.image_ref() or "",
            tail=last.split("\n\n")[-1],
        )

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.calls.append(request)
            self._in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self._in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            last = request.last_user_content()
            for needle in self.fail_contains:
                if needle in last or needle == (request.image_ref() or ""):
                    raise BackendError(f"stub failure triggered by {needle!r}")
            if self.responder is not None:
                return self.responder(request)
            if last in self.table:
                return self.table[last]
            for needle, template in self.rules:
                if needle in last:
                    return self._fill(template, request)
            if self.template is not None:
                return self._fill(self.template, request)
            raise BackendError(f"stub has no response for {last!r}")
        finally:
            with self._lock:
                self._in_flight -= 1


class HttpBackend:
    """Chat-completion HTTP API backend (message-list JSON payloads)."""

    def __init__(self, config: ClientConfig, session: requests.Session | None = None):
        if not config.endpoint:
            raise ValueError("HttpBackend requires an endpoint")
        self.config = config
        self.session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: ChatRequest) -> str:
        payload = {
            "model": request.model_id,
            "messages": [m.to_dict() for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = self.session.post(
                self.config.endpoint, json=payload, headers=self._headers(), timeout=(5, 120)
            )
        except requests.RequestException as exc:
            raise BackendError(f"request failed: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"authentication failed ({resp.status_code})")
        if resp.status_code != 200:
            raise BackendError(f"backend returned status {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            return body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed backend response: {exc}") from exc


@dataclass
class CallFailure:
    """Per-item error marker returned by complete_batch."""

    error: str

    def __str__(self) -> str:
        return self.error


class ChatClient:
    """Backend wrapper adding caching, retries, and an in-flight bound.

    Safe to share across worker threads; the in-flight semaphore is the only
    shared mutable state besides the on-disk cache.
    """

    def __init__(
        self,
        backend: Backend,
        max_in_flight: int = 4,
        cache_dir: str | Path | None = None,
        retry: RetryPolicy = RetryPolicy(),
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.backend = backend
        self.max_in_flight = max_in_flight
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.retry = retry
        self._sleep = sleep
        self._semaphore = threading.Semaphore(max_in_flight)

    def _cache_path(self, request: ChatRequest) -> Path | None:
        if self.cache_dir is None:
            return None
        return self.cache_dir / f"{request.cache_key()}.txt"

    def _cache_get(self, request: ChatRequest) -> str | None:
        path = self._cache_path(request)
        if path is not None and path.exists():
            return path.read_text(encoding="utf-8")
        return None

    def _cache_put(self, request: ChatRequest, text: str) -> None:
        path = self._cache_path(request)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)

    def complete(self, request: ChatRequest) -> str:
        cached = self._cache_get(request)
        if cached is not None:
            return cached
        last_error: Exception | None = None
        for attempt in range(self.retry.max_attempts):
            if attempt > 0:
                self._sleep(self.retry.delay(attempt - 1))
            with self._semaphore:
                try:
                    text = self.backend.complete(request)
                    self._cache_put(request, text)
                    return text
                except AuthError:
                    raise  # retrying with the same bad key cannot help
                except BackendError as exc:
                    last_error = exc
        raise BackendError(
            f"backend failed after {self.retry.max_attempts} attempts: {last_error}"
        ) from last_error

    def complete_batch(self, requests_: Sequence[ChatRequest]) -> list[str | CallFailure]:
        """Order-preserving batch completion with per-item error capture."""
        if not requests_:
            raise ValueError("complete_batch requires a non-empty request list")

        def one(request: ChatRequest) -> str | CallFailure:
            try:
                return self.complete(request)
            except ClientError as exc:
                return CallFailure(str(exc))

        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(one, requests_))


def load_client(source: str | Path | dict, base_dir: Path | None = None) -> ChatClient:
    """Build a ChatClient from a JSON config file or an already-parsed dict.

    Stub config::

        {"backend": "stub", "table": {...}, "rules": [["needle", "template"], ...],
         "template": "...", "fail_contains": [...], "max_in_flight": 4,
         "cache_dir": "cache/llm"}

    HTTP config::

        {"backend": "http", "endpoint": "https://...", "api_key_env": "KEY_ENV",
         "model_id": "...", "max_in_flight": 8, "cache_dir": "...",
         "retry": {"max_attempts": 3, "backoff": [0.5, 1, 2]}}
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        data = json.loads(path.read_text(encoding="utf-8"))
        if base_dir is None:
            base_dir = path.parent
    else:
        data = dict(source)
    kind = data.get("backend", "stub")
    retry_data = data.get("retry", {})
    retry = RetryPolicy(
        max_attempts=int(retry_data.get("max_attempts", 3)),
        backoff=tuple(retry_data.get("backoff", (0.5, 1.0, 2.0))),
    )
    cache_dir = data.get("cache_dir")
    if cache_dir and base_dir is not None and not Path(cache_dir).is_absolute():
        cache_dir = str(base_dir / cache_dir)
    max_in_flight = int(data.get("max_in_flight", 4))

    if kind == "stub":
        backend: Backend = StubBackend(
            table=data.get("table"),
            rules=[tuple(rule) for rule in data.get("rules", [])],
            template=data.get("template"),
            fail_contains=data.get("fail_contains", ()),
        )
    elif kind == "http":
        config = ClientConfig(
            endpoint=data["endpoint"],
            api_key_env=data.get("api_key_env", "VLMPREP_API_KEY"),
            max_in_flight=max_in_flight,
            model_id=data.get("model_id", "default"),
        )
        backend = HttpBackend(config)
    else:
        raise ValueError(f"unknown backend kind {kind!r}")
    return ChatClient(backend, max_in_flight=max_in_flight, cache_dir=cache_dir, retry=retry)

"""Uniform client for external chat-completion endpoints.

Two interchangeable clients share one retry/concurrency shell:

* HttpGateway posts OpenAI-style JSON to ``{base_url}/chat/completions``,
  embedding frames as base64 JPEG data URLs.
* ScriptedGateway replays a fixed script (list of ``{match, reply}``
  entries consumed in order), which makes every downstream pipeline
  byte-reproducible offline.  Entries may carry ``fail`` instead of
  ``reply`` to simulate transient errors for retry tests.

Requests serialize deterministically: identical (endpoint, messages)
produce byte-identical bodies.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import (
    ContractError,
    GatewayTimeoutError,
    ProtocolError,
    StubScriptError,
    TransportError,
)

logger = logging.getLogger(__name__)

API_KEY_ENV = "ADZERO_API_KEY"

ROLES = ("system", "user", "assistant")

# JPEG transmission settings: bounds payload size without destroying
# the thin colored overlays drawn by the visual-prompting step.
FRAME_JPEG_QUALITY = 90
FRAME_MAX_SIDE = 768


@dataclass(frozen=True)
class ChatMessage:
    """One chat turn; ``images`` holds already-encoded JPEG frames."""

    role: str
    text: str
    images: tuple[bytes, ...] = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise ContractError(f"unknown role {self.role!r}")
        if self.images and self.role != "user":
            raise ContractError("images are only allowed on user messages")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    max_tokens: int = 512
    temperature: float = 0.0
    timeout: float = 120.0
    max_in_flight: int = 4
    retry_limit: int = 2

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ContractError("max_in_flight must be >= 1")
        if self.temperature < 0:
            raise ContractError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ContractError("max_tokens must be positive")
        if self.retry_limit < 0:
            raise ContractError("retry_limit must be >= 0")


@dataclass(frozen=True)
class ChatOutcome:
    text: str
    finish_reason: str  # complete | truncated | error
    latency: float


def encode_frame(image) -> bytes:
    """Encode a PIL image as JPEG, longest side capped at FRAME_MAX_SIDE."""
    longest = max(image.size)
    if longest > FRAME_MAX_SIDE:
        scale = FRAME_MAX_SIDE / longest
        image = image.resize(
            (max(1, round(image.width * scale)), max(1, round(image.height * scale)))
        )
    buf = io.BytesIO()
    image.convert("RGB").save(buf, format="JPEG", quality=FRAME_JPEG_QUALITY)
    return buf.getvalue()


def _message_payload(message: ChatMessage) -> dict:
    if not message.images:
        return {"role": message.role, "content": message.text}
    parts: list[dict] = [{"type": "text", "text": message.text}]
    for blob in message.images:
        url = "data:image/jpeg;base64," + base64.b64encode(blob).decode("ascii")
        parts.append({"type": "image_url", "image_url": {"url": url}})
    return {"role": message.role, "content": parts}


def build_request_body(endpoint: EndpointConfig, messages: list[ChatMessage]) -> bytes:
    """Deterministic JSON request body (sorted keys, fixed separators)."""
    payload = {
        "model": endpoint.model_name,
        "messages": [_message_payload(m) for m in messages],
        "max_tokens": endpoint.max_tokens,
        "temperature": endpoint.temperature,
    }
    return json.dumps(
        payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


class Gateway:
    """Retry + bounded-concurrency shell shared by the HTTP and stub clients.

    Thread-safe; per-endpoint in-flight requests never exceed
    ``endpoint.max_in_flight``.  Transient failures are retried up to
    ``endpoint.retry_limit`` extra attempts with exponential backoff.
    """

    def __init__(self, backoff_base: float = 0.5):
        self.backoff_base = backoff_base
        self._semaphores: dict[tuple[str, str], threading.BoundedSemaphore] = {}
        self._lock = threading.Lock()

    def _semaphore(self, endpoint: EndpointConfig) -> threading.BoundedSemaphore:
        key = (endpoint.base_url, endpoint.model_name)
        with self._lock:
            if key not in self._semaphores:
                self._semaphores[key] = threading.BoundedSemaphore(
                    endpoint.max_in_flight
                )
            return self._semaphores[key]

    def complete(
        self, endpoint: EndpointConfig, messages: list[ChatMessage]
    ) -> ChatOutcome:
        if not messages:
            raise ContractError("messages must be non-empty")
        start = time.monotonic()
        attempts = endpoint.retry_limit + 1
        last_exc: Exception | None = None
        sem = self._semaphore(endpoint)
        for attempt in range(attempts):
            if attempt and self.backoff_base > 0:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                with sem:
                    text, finish = self._attempt(endpoint, messages)
                return ChatOutcome(
                    text=text,
                    finish_reason=finish,
                    latency=time.monotonic() - start,
                )
            except (TransportError, GatewayTimeoutError) as exc:
                last_exc = exc
                logger.debug("attempt %d/%d failed: %s", attempt + 1, attempts, exc)
        assert last_exc is not None
        raise last_exc

    def _attempt(
        self, endpoint: EndpointConfig, messages: list[ChatMessage]
    ) -> tuple[str, str]:
        raise NotImplementedError


class HttpGateway(Gateway):
    """Client for OpenAI-style ``/chat/completions`` HTTP endpoints.

    A bearer token is read from the ADZERO_API_KEY environment variable
    when present.  5xx and 429 responses count as transient and are
    retried; other non-2xx statuses raise ProtocolError immediately.
    """

    def _attempt(self, endpoint, messages):
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(API_KEY_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = build_request_body(endpoint, messages)
        try:
            resp = requests.post(
                url, data=body, headers=headers, timeout=endpoint.timeout
            )
        except requests.Timeout as exc:
            raise GatewayTimeoutError(f"timeout after {endpoint.timeout}s") from exc
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (429,) or 500 <= resp.status_code < 600:
            raise TransportError(f"transient HTTP {resp.status_code}: {resp.text[:200]}")
        if not 200 <= resp.status_code < 300:
            raise ProtocolError(resp.status_code, resp.text)
        try:
            data = resp.json()
            choice = data["choices"][0]
            text = choice["message"]["content"] or ""
            reason = choice.get("finish_reason", "stop")
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(resp.status_code, resp.text) from exc
        finish = {"stop": "complete", "length": "truncated"}.get(reason, "error")
        return text, finish


@dataclass
class StubCall:
    """Call-log entry recorded by ScriptedGateway for every attempt."""

    model: str
    user_text: str
    n_images: int
    entry_index: int


class ScriptedGateway(Gateway):
    """Deterministic stub: replies come from a fixed script.

    Script entries are dicts with ``match`` (substring looked up in the
    concatenated user-message text) and either ``reply`` (the text to
    return) or ``fail`` ("transport" or "timeout", simulating one failed
    attempt).  Each attempt consumes the first unconsumed entry whose
    ``match`` is found; an unmatched attempt raises StubScriptError.
    """

    def __init__(self, script: list[dict], backoff_base: float = 0.0,
                 latency: float = 0.0):
        super().__init__(backoff_base=backoff_base)
        for entry in script:
            if "match" not in entry or ("reply" not in entry and "fail" not in entry):
                raise ContractError("script entries need 'match' and 'reply' or 'fail'")
        self.script = list(script)
        self.latency = latency
        self.calls: list[StubCall] = []
        self._consumed = [False] * len(script)
        self._log_lock = threading.Lock()
        self._in_flight = 0
        self.max_in_flight_seen = 0

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "ScriptedGateway":
        with open(path, encoding="utf-8") as f:
            script = json.load(f)
        if not isinstance(script, list):
            raise ContractError("stub script file must hold a JSON list")
        return cls(script, **kwargs)

    def _attempt(self, endpoint, messages):
        user_text = "\n".join(m.text for m in messages if m.role == "user")
        n_images = sum(len(m.images) for m in messages)
        with self._log_lock:
            self._in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self._in_flight)
            index = None
            for i, entry in enumerate(self.script):
                if not self._consumed[i] and entry["match"] in user_text:
                    index = i
                    self._consumed[i] = True
                    break
            self.calls.append(
                StubCall(
                    model=endpoint.model_name,
                    user_text=user_text,
                    n_images=n_images,
                    entry_index=-1 if index is None else index,
                )
            )
        try:
            if self.latency > 0:
                time.sleep(self.latency)
            if index is None:
                raise StubScriptError(
                    f"no unconsumed script entry matches prompt {user_text[:80]!r}"
                )
            entry = self.script[index]
            if "fail" in entry:
                if entry["fail"] == "timeout":
                    raise GatewayTimeoutError("scripted timeout")
                raise TransportError("scripted transport failure")
            return entry["reply"], "complete"
        finally:
            with self._log_lock:
                self._in_flight -= 1

"""Model boundary: OpenAI-compatible HTTP backend and a deterministic mock reader.

The mock is a single-register backward-chaining reader.  It reads every chain
fact in the prompt as one left-to-right stream, starting from the queried
element, and follows a fact ``a -> b`` backwards only when ``b`` is the value
it is currently looking for.  Because the round-robin fact order lists a
chain's links front to back, each pass over the context resolves one hop, so
an ``n``-element chain needs ``n - 1`` copies of the context.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import random
import threading
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import httpx

from corerep.errors import CapabilityError, FatalError, MockParseError, RetryableError
from corerep.prompt_builder import ChatMessage, MessageRole
from corerep.synthetic_chains import FACT_RE, QUESTION_RE

logger = logging.getLogger(__name__)

UNKNOWN = "unknown"
RETRYABLE_STATUS = frozenset({408, 429, 500, 502, 503, 504})
_audit_lock = threading.Lock()


class Capability(str, enum.Enum):
    GENERATE = "generate"
    SCORE_TARGET = "score_target"


@dataclass(frozen=True)
class MockConfig:
    answer_prefix: str = "Answer: "
    unknown: str = UNKNOWN


@dataclass(frozen=True)
class HttpBackend:
    endpoint: str
    model_id: str
    api_key_env: str | None = "OPENAI_API_KEY"
    supports_logprobs: bool = False
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    log_io: str | None = None
    transport: httpx.BaseTransport | None = field(default=None, compare=False, repr=False)
    sleep: Callable[[float], None] = field(default=time.sleep, compare=False, repr=False)

    @property
    def url(self) -> str:
        return self.endpoint.rstrip("/") + "/chat/completions"


@dataclass(frozen=True)
class ModelHandle:
    name: str
    capabilities: frozenset[Capability]
    backend: HttpBackend | MockConfig

    def __post_init__(self) -> None:
        object.__setattr__(self, "capabilities", frozenset(Capability(c) for c in self.capabilities))
        if isinstance(self.backend, HttpBackend):
            if Capability.GENERATE not in self.capabilities:
                raise ValueError("HTTP backends always generate")
            if Capability.SCORE_TARGET in self.capabilities and not self.backend.supports_logprobs:
                raise ValueError("target scoring needs an endpoint with per-token logprobs")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    finish_reason: str
    token_logprobs: tuple[float, ...] | None = None
    latency_ms: int = 0


def mock_handle(name: str = "mock-chain-reader", config: MockConfig | None = None) -> ModelHandle:
    return ModelHandle(name, frozenset({Capability.GENERATE, Capability.SCORE_TARGET}), config or MockConfig())


def http_handle(
    endpoint: str,
    model_id: str,
    *,
    name: str | None = None,
    api_key_env: str | None = "OPENAI_API_KEY",
    supports_logprobs: bool = False,
    **backend_kwargs: Any,
) -> ModelHandle:
    backend = HttpBackend(endpoint, model_id, api_key_env, supports_logprobs, **backend_kwargs)
    caps = {Capability.GENERATE}
    if supports_logprobs:
        caps.add(Capability.SCORE_TARGET)
    return ModelHandle(name or model_id, frozenset(caps), backend)


# ---------------------------------------------------------------- mock reader


def mock_chain_read(config: MockConfig, messages: Sequence[ChatMessage]) -> str:
    stream = "\n".join(m.content for m in messages)
    question = QUESTION_RE.search(stream)
    if question is None:
        raise MockParseError("no chained-list question found in the prompt")
    facts = [(int(a), int(b)) for _, a, b in FACT_RE.findall(stream)]
    if not facts:
        raise MockParseError("no chain facts found in the prompt")
    sought = int(question.group(1))
    for a, b in facts:
        if b == sought:
            sought = a
    if any(b == sought for _, b in facts):
        return config.unknown
    return str(sought)


# ---------------------------------------------------------------- HTTP


def _canonical_body(body: dict[str, Any]) -> bytes:
    return json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def request_body(
    backend: HttpBackend,
    messages: Sequence[ChatMessage],
    max_tokens: int,
    temperature: float,
    logprobs: bool,
    extra: dict[str, Any] | None = None,
) -> bytes:
    """Byte-stable chat-completions payload (fixed field order)."""
    body: dict[str, Any] = {
        "model": backend.model_id,
        "messages": [m.to_dict() for m in messages],
        "max_tokens": max_tokens,
        "temperature": temperature,
        "logprobs": logprobs,
    }
    if extra:
        body.update(extra)
    return _canonical_body(body)


def _audit(backend: HttpBackend, payload: bytes, status: int | None, response: str) -> None:
    if not backend.log_io:
        return
    try:
        parsed: Any = json.loads(response)
    except ValueError:
        parsed = response
    entry = {
        "time": time.time(),
        "url": backend.url,
        "request": json.loads(payload),
        "status": status,
        "response": parsed,
    }
    with _audit_lock:
        Path(backend.log_io).parent.mkdir(parents=True, exist_ok=True)
        with open(backend.log_io, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


def _post(backend: HttpBackend, payload: bytes) -> dict[str, Any]:
    headers = {"Content-Type": "application/json"}
    if backend.api_key_env:
        key = os.environ.get(backend.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
    last: str = ""
    for attempt in range(backend.max_attempts):
        if attempt:
            delay = backend.backoff_base * 2 ** (attempt - 1)
            backend.sleep(delay * (1 + 0.25 * random.random()))
        try:
            with httpx.Client(transport=backend.transport, timeout=backend.timeout) as client:
                resp = client.post(backend.url, content=payload, headers=headers)
        except httpx.TransportError as exc:
            last = f"{type(exc).__name__}: {exc}"
            logger.warning("attempt %d/%d to %s failed: %s", attempt + 1, backend.max_attempts, backend.url, last)
            _audit(backend, payload, None, last)
            continue
        _audit(backend, payload, resp.status_code, resp.text)
        if resp.status_code in RETRYABLE_STATUS:
            last = f"HTTP {resp.status_code}: {resp.text[:200]}"
            logger.warning("attempt %d/%d to %s got %s", attempt + 1, backend.max_attempts, backend.url, last)
            continue
        if resp.status_code >= 400:
            excerpt = resp.text[:500]
            raise FatalError(f"HTTP {resp.status_code} from {backend.url}: {excerpt}", resp.status_code, excerpt)
        try:
            return resp.json()
        except ValueError as exc:
            raise FatalError(f"non-JSON response from {backend.url}: {resp.text[:500]}") from exc
    raise RetryableError(f"{backend.url} failed after {backend.max_attempts} attempts ({last})")


def _token_entries(choice: dict[str, Any]) -> list[tuple[str, float | None]]:
    content = (choice.get("logprobs") or {}).get("content") or []
    return [(entry.get("token", ""), entry.get("logprob")) for entry in content]


def _http_generate(
    backend: HttpBackend, messages: Sequence[ChatMessage], max_tokens: int, temperature: float
) -> GenerationResult:
    payload = request_body(backend, messages, max_tokens, temperature, backend.supports_logprobs)
    start = time.perf_counter()
    data = _post(backend, payload)
    latency = int((time.perf_counter() - start) * 1000)
    try:
        choice = data["choices"][0]
        text = choice["message"].get("content") or ""
    except (KeyError, IndexError, TypeError) as exc:
        raise FatalError(f"malformed chat completion: {json.dumps(data)[:500]}") from exc
    logprobs = None
    if backend.supports_logprobs:
        values = [lp for _, lp in _token_entries(choice) if lp is not None]
        logprobs = tuple(values) if values else None
    return GenerationResult(text, choice.get("finish_reason") or "stop", logprobs, latency)


def _with_forced_target(messages: Sequence[ChatMessage], target: str) -> list[ChatMessage]:
    msgs = list(messages)
    if msgs and msgs[-1].role is MessageRole.ASSISTANT:
        msgs[-1] = ChatMessage(MessageRole.ASSISTANT, f"{msgs[-1].content} {target}")
    else:
        msgs.append(ChatMessage(MessageRole.ASSISTANT, target))
    return msgs


def target_mean_logprob(entries: Sequence[tuple[str, float | None]], target: str) -> float:
    """Mean logprob of the tokens covering the last occurrence of ``target``."""
    text = ""
    spans = []
    for token, lp in entries:
        spans.append((len(text), len(text) + len(token), lp))
        text += token
    start = text.rfind(target)
    if start < 0:
        raise FatalError("backend did not echo the forced target tokens")
    end = start + len(target)
    covered = [lp for s, e, lp in spans if s < end and e > start and lp is not None]
    if not covered:
        raise FatalError("backend returned no logprobs for the forced target")
    return sum(covered) / len(covered)


def _http_score(backend: HttpBackend, messages: Sequence[ChatMessage], target: str) -> float:
    # Assumes a vLLM-style endpoint that echoes the continued final message with logprobs.
    extra = {"echo": True, "add_generation_prompt": False, "continue_final_message": True}
    payload = request_body(backend, _with_forced_target(messages, target), 1, 0.0, True, extra)
    data = _post(backend, payload)
    try:
        choice = data["choices"][0]
    except (KeyError, IndexError, TypeError) as exc:
        raise FatalError(f"malformed chat completion: {json.dumps(data)[:500]}") from exc
    return target_mean_logprob(_token_entries(choice), target)


# ---------------------------------------------------------------- public API


def generate(
    handle: ModelHandle,
    messages: Sequence[ChatMessage],
    max_tokens: int = 64,
    temperature: float = 0.0,
) -> GenerationResult:
    if Capability.GENERATE not in handle.capabilities:
        raise CapabilityError(f"model {handle.name!r} cannot generate")
    if not messages:
        raise ValueError("messages must be non-empty")
    backend = handle.backend
    if isinstance(backend, MockConfig):
        start = time.perf_counter()
        answer = mock_chain_read(backend, messages)
        latency = int((time.perf_counter() - start) * 1000)
        return GenerationResult(f"{backend.answer_prefix}{answer}", "stop", None, latency)
    return _http_generate(backend, messages, max_tokens, temperature)


def score_target(handle: ModelHandle, messages: Sequence[ChatMessage], target: str) -> float:
    """Mean per-token log-probability of ``target`` as the forced continuation."""
    if Capability.SCORE_TARGET not in handle.capabilities:
        raise CapabilityError(f"model {handle.name!r} cannot score targets")
    if not target or not target.strip():
        raise ValueError("target must be non-empty")
    if not messages:
        raise ValueError("messages must be non-empty")
    backend = handle.backend
    if isinstance(backend, MockConfig):
        return 0.0 if mock_chain_read(backend, messages) == target.strip() else -1.0
    return _http_score(backend, messages, target)

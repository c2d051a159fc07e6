"""Provider-agnostic chat-completion gateway.

The gateway owns caching, schema validation with re-asks, transport retries with
backoff, and the bound on concurrent in-flight provider calls. Providers only turn
one request into raw text.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Protocol

from ..errors import ConfigError, WorkbenchError
from .cache import ResponseCache
from .config import StageModelConfig
from .schemas import extract_json, schema_violation

log = logging.getLogger(__name__)


class GatewayError(WorkbenchError):
    def __init__(self, message: str, attempts: int = 0) -> None:
        super().__init__(message)
        self.attempts = attempts


class TransportError(GatewayError):
    retryable = True


class FatalTransportError(TransportError):
    """Provider rejected the request in a way retrying cannot fix (e.g. HTTP 400/401)."""

    retryable = False


class RateLimited(TransportError):
    def __init__(self, message: str, retry_after: float | None = None, attempts: int = 0) -> None:
        super().__init__(message, attempts)
        self.retry_after = retry_after


class SchemaError(GatewayError):
    def __init__(self, message: str, raw: str, attempts: int = 0) -> None:
        super().__init__(message, attempts)
        self.raw = raw


class ScriptExhausted(GatewayError):
    """A mock provider has no scripted response left for a request."""


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    prompt: str
    schema_id: str | None = None
    temperature: float = 0.2
    # Structured side-channel for mock providers and logging; not part of the cache key.
    hints: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not self.prompt.strip():
            raise ValueError("prompt must be non-empty")

    @property
    def key(self) -> str:
        blob = json.dumps(
            {"model": self.model, "prompt": self.prompt, "temperature": self.temperature, "schema": self.schema_id},
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Provenance:
    provider: str
    cached: bool
    attempts: int


@dataclass(frozen=True)
class CompletionResult:
    text: str
    parsed: Any
    provenance: Provenance


class Provider(Protocol):
    name: str

    def send(self, request: CompletionRequest, *, key: str, attempt: int) -> str: ...


Validator = Callable[[Any], "str | None"]

REASK_TEMPLATE = (
    "\n\nYour previous reply was rejected: {error}\n"
    "Reply again with a single JSON object that satisfies the required schema exactly."
)


def check_response(raw: str, schema_id: str | None, validator: Validator | None) -> tuple[Any, str | None]:
    """Return ``(payload, violation)``; ``violation`` is None when the response is acceptable."""
    if schema_id is None and validator is None:
        return None, None
    payload: Any = raw
    if schema_id is not None:
        try:
            payload = extract_json(raw)
        except ValueError as exc:
            return None, f"response is not valid JSON ({exc})"
        problem = schema_violation(payload, schema_id)
        if problem:
            return payload, problem
    if validator is not None:
        problem = validator(payload)
        if problem:
            return payload, problem
    return payload, None


class Gateway:
    def __init__(
        self,
        config: StageModelConfig,
        provider: Provider,
        cache: ResponseCache | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        self.provider = provider
        if cache is None and config.cache_dir:
            cache = ResponseCache(config.cache_dir)
        self.cache = cache
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._count_lock = threading.Lock()
        self.provider_calls = 0

    def request(self, stage: str, prompt: str, schema_id: str | None = None, **hints: Any) -> CompletionRequest:
        return CompletionRequest(
            model=self.config.route(stage),
            prompt=prompt,
            schema_id=schema_id,
            temperature=self.config.temperature,
            hints={"stage": stage, **hints},
        )

    def _send(self, request: CompletionRequest, key: str, attempt: int) -> str:
        with self._slots:
            with self._count_lock:
                self.provider_calls += 1
            return self.provider.send(request, key=key, attempt=attempt)

    def complete(self, request: CompletionRequest, validator: Validator | None = None) -> CompletionResult:
        if request.model not in self.config.models.values():
            raise ConfigError(f"model {request.model!r} is not routed by this configuration")
        key = request.key
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                payload, problem = check_response(hit["raw"], request.schema_id, validator)
                if problem is None:
                    return CompletionResult(hit["raw"], payload, Provenance(self.provider.name, True, 0))

        prompt = request.prompt
        attempts = 0
        transport_failures = 0
        last: GatewayError | None = None
        for attempt in range(self.config.max_retries + 1):
            attempts += 1
            try:
                raw = self._send(replace(request, prompt=prompt), key, attempt)
            except TransportError as exc:
                transport_failures += 1
                last = exc
                if not exc.retryable or attempt == self.config.max_retries:
                    break
                delay = self.config.backoff.delay(transport_failures)
                if isinstance(exc, RateLimited) and exc.retry_after:
                    delay = max(delay, exc.retry_after)
                log.debug("transport failure on attempt %d (%s); sleeping %.2fs", attempts, exc, delay)
                self._sleep(delay)
                continue
            except ScriptExhausted as exc:
                exc.attempts = attempts
                raise

            payload, problem = check_response(raw, request.schema_id, validator)
            if problem is None:
                if self.cache is not None:
                    self.cache.put(
                        key,
                        {"raw": raw, "model": request.model, "schema_id": request.schema_id,
                         "temperature": request.temperature, "attempts": attempts},
                    )
                return CompletionResult(raw, payload, Provenance(self.provider.name, False, attempts))
            log.debug("schema violation on attempt %d: %s", attempts, problem)
            last = SchemaError(problem, raw)
            prompt = request.prompt + REASK_TEMPLATE.format(error=problem)

        assert last is not None
        last.attempts = attempts
        raise last

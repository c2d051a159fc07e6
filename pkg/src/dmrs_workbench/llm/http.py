from __future__ import annotations

import os
from typing import Any, Mapping

import httpx

from .client import CompletionRequest, FatalTransportError, RateLimited, TransportError
from .config import StageModelConfig


class HttpProvider:
    """OpenAI-compatible ``/chat/completions`` endpoint over httpx."""

    name = "http"

    def __init__(self, config: StageModelConfig, client: httpx.Client | None = None) -> None:
        self.url = config.endpoint.rstrip("/") + "/chat/completions"
        self.extra_params: Mapping[str, Any] = dict(config.extra_params)
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = client or httpx.Client(headers=headers, timeout=config.timeout)

    def close(self) -> None:
        self._client.close()

    def payload(self, request: CompletionRequest) -> dict:
        body: dict[str, Any] = {
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        }
        if request.schema_id is not None:
            body["response_format"] = {"type": "json_object"}
        body.update(self.extra_params)
        return body

    def send(self, request: CompletionRequest, *, key: str, attempt: int) -> str:
        try:
            resp = self._client.post(self.url, json=self.payload(request))
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            try:
                seconds = float(retry_after) if retry_after else None
            except ValueError:
                seconds = None
            raise RateLimited("HTTP 429 from provider", retry_after=seconds)
        if resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code} from provider")
        if resp.status_code >= 400:
            raise FatalTransportError(f"HTTP {resp.status_code} from provider: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion body: {exc}") from exc
        return content or ""

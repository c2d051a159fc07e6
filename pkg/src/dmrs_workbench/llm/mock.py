"""Deterministic stand-in provider for tests, demos and golden runs.

A script may contain any of:

``transcript``
    replies handed out in call order, shared by every request;
``rules``
    ``{"match": {...}, "replies": [...], "repeat_last": bool}`` entries. A rule
    matches on ``schema``, ``model``, ``prompt_contains``, ``prompt_regex`` and any
    request hint (a list value means membership). Reply ``k`` answers attempt ``k``
    of a request, so answers do not depend on call order;
``seed``
    synthesize a schema-valid reply for requests no rule matches.

A reply is a string, a JSON payload (object or list), or ``{"error": "transport"}``
/ ``{"error": "rate_limit", "retry_after": s}``.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml

from .client import CompletionRequest, RateLimited, ScriptExhausted, TransportError

_CONFIDENCES = ("High", "Medium", "Low")
_STRESSORS = (
    "loss of employment and financial insecurity",
    "conflict with a close friend",
    "end of a romantic relationship",
    "pressure to perform in exams",
    "persistent low mood and isolation",
    "uncertainty about the future",
)


@dataclass
class Rule:
    match: Mapping[str, Any]
    replies: Sequence[Any]
    repeat_last: bool = False

    def matches(self, request: CompletionRequest) -> bool:
        for field, want in self.match.items():
            if field == "schema":
                got: Any = request.schema_id
            elif field == "model":
                got = request.model
            elif field == "prompt_contains":
                if str(want) not in request.prompt:
                    return False
                continue
            elif field == "prompt_regex":
                if not re.search(str(want), request.prompt):
                    return False
                continue
            else:
                if field not in request.hints:
                    return False
                got = request.hints[field]
            if isinstance(want, list):
                if got not in want:
                    return False
            elif got != want:
                return False
        return True


def _render(reply: Any) -> str:
    if isinstance(reply, str):
        return reply
    if isinstance(reply, dict) and set(reply) <= {"error", "retry_after"} and "error" in reply:
        kind = reply["error"]
        if kind == "rate_limit":
            raise RateLimited("scripted rate limit", retry_after=reply.get("retry_after"))
        raise TransportError(f"scripted {kind} failure")
    return json.dumps(reply, sort_keys=True, ensure_ascii=False)


class MockProvider:
    name = "mock"

    def __init__(
        self,
        transcript: Sequence[Any] | None = None,
        rules: Sequence[Mapping[str, Any] | Rule] = (),
        seed: int | None = None,
        relevance_rate: float = 0.25,
        latency: float = 0.0,
    ) -> None:
        self.transcript = list(transcript) if transcript is not None else None
        self.rules = [r if isinstance(r, Rule) else Rule(r["match"], r["replies"], r.get("repeat_last", False))
                      for r in rules]
        self.seed = seed
        self.relevance_rate = relevance_rate
        self.latency = latency
        self._lock = threading.Lock()
        self._cursor = 0
        self.calls: list[tuple[str, int, CompletionRequest]] = []
        self.in_flight = 0
        self.max_in_flight_seen = 0

    @classmethod
    def from_script(cls, script: Mapping[str, Any] | str | Path) -> MockProvider:
        if not isinstance(script, Mapping):
            script = yaml.safe_load(Path(script).read_text(encoding="utf-8")) or {}
        if not isinstance(script, Mapping):
            raise ValueError("mock script must be a mapping")
        unknown = set(script) - {"transcript", "rules", "seed", "relevance_rate", "latency"}
        if unknown:
            raise ValueError(f"unknown mock script fields {sorted(unknown)}")
        return cls(
            transcript=script.get("transcript"),
            rules=script.get("rules", ()),
            seed=script.get("seed"),
            relevance_rate=script.get("relevance_rate", 0.25),
            latency=script.get("latency", 0.0),
        )

    @property
    def call_count(self) -> int:
        return len(self.calls)

    @property
    def prompts(self) -> list[str]:
        return [req.prompt for _, _, req in self.calls]

    def send(self, request: CompletionRequest, *, key: str, attempt: int) -> str:
        with self._lock:
            self.calls.append((key, attempt, request))
            self.in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)
            if self.transcript is not None:
                position = self._cursor
                self._cursor += 1
        try:
            if self.latency:
                time.sleep(self.latency)
            return self._respond(request, key, attempt, position if self.transcript is not None else None)
        finally:
            with self._lock:
                self.in_flight -= 1

    def _respond(self, request: CompletionRequest, key: str, attempt: int, position: int | None) -> str:
        if position is not None:
            if position >= len(self.transcript):
                raise ScriptExhausted(f"transcript of {len(self.transcript)} entries exhausted at call {position + 1}")
            return _render(self.transcript[position])
        for rule in self.rules:
            if rule.matches(request):
                if attempt < len(rule.replies):
                    return _render(rule.replies[attempt])
                if rule.repeat_last and rule.replies:
                    return _render(rule.replies[-1])
                raise ScriptExhausted(f"rule {dict(rule.match)} has no reply for attempt {attempt + 1}")
        if self.seed is not None:
            return self._synthesize(request, key)
        raise ScriptExhausted(f"no scripted reply for {request.schema_id or 'free-text'} request")

    # -- seeded synthesis ---------------------------------------------------------

    def _draw(self, *parts: Any) -> int:
        blob = "|".join(str(p) for p in (self.seed, *parts))
        return int(hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12], 16)

    def _relevant(self, key: str, item_id: Any) -> bool:
        return (self._draw(key, "relevant", item_id) % 10_000) < self.relevance_rate * 10_000

    def _synthesize(self, request: CompletionRequest, key: str) -> str:
        hints = request.hints
        schema = request.schema_id
        if schema is None:
            return f"Level: {self._draw(key) % 9}"
        if schema == "stressor":
            return _render({"stressor": _STRESSORS[self._draw(key) % len(_STRESSORS)]})
        if schema == "screening":
            item_id = hints.get("item_id")
            relevant = self._relevant(key, item_id)
            why = "cues in the target fit this item" if relevant else "no textual support for this item"
            return _render({"relevant": relevant, "rationale": why})
        if schema == "screening_batch":
            return _render(
                {
                    "judgments": [
                        {
                            "item_id": i,
                            "relevant": self._relevant(key, i),
                            "rationale": "batch screening judgment",
                        }
                        for i in hints.get("item_ids", [])
                    ]
                }
            )
        if schema == "validation":
            words = str(hints.get("target", "")).split()[:6]
            return _render(
                {
                    "confidence": _CONFIDENCES[self._draw(key, "conf") % 3],
                    "evidence": "target wording: " + (" ".join(words) or "n/a"),
                }
            )
        if schema == "synthesis":
            candidates = sorted(hints.get("candidates", []), key=lambda c: self._draw(key, c["item_id"]))
            picks = []
            for c in candidates[:2]:
                picks.append(
                    {
                        "item_id": c["item_id"],
                        "level": c["level"],
                        "rationale": f"validated item {c['item_id']} best explains the utterance",
                        "relational_cues": ["reply to supporter's preceding turn"],
                    }
                )
            while len(picks) < 2:
                picks.append(
                    {"item_id": None, "level": 8, "rationale": "evidence supports only one level",
                     "relational_cues": []}
                )
            return _render({"primary": picks[0], "secondary": picks[1]})
        raise ScriptExhausted(f"seeded mock cannot synthesize schema {schema!r}")

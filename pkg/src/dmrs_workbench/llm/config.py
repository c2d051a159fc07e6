"""Stage routing and client settings, loadable from a YAML or JSON file."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..errors import ConfigError

STAGES = ("stressor", "screening", "validation", "synthesis", "zero_shot")

DEEP_MODEL = "gemini-2.5-pro"
FAST_MODEL = "gemini-2.5-flash"

DEFAULT_MODELS = {
    "stressor": DEEP_MODEL,
    "screening": FAST_MODEL,
    "validation": DEEP_MODEL,
    "synthesis": DEEP_MODEL,
    "zero_shot": DEEP_MODEL,
}


@dataclass(frozen=True)
class Backoff:
    base: float = 1.0
    factor: float = 2.0
    max_delay: float = 30.0

    def delay(self, failures: int) -> float:
        """Sleep before the retry that follows the ``failures``-th transport failure."""
        return min(self.max_delay, self.base * self.factor ** max(0, failures - 1))


@dataclass(frozen=True)
class StageModelConfig:
    models: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_MODELS))
    endpoint: str = "https://generativelanguage.googleapis.com/v1beta/openai"
    api_key_env: str = "LLM_API_KEY"
    temperature: float = 0.2
    max_retries: int = 3
    backoff: Backoff = field(default_factory=Backoff)
    max_in_flight: int = 8
    fanout: int = 8
    screening_batch_size: int = 1
    cache_dir: str | None = None
    timeout: float = 60.0
    extra_params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.fanout < 1:
            raise ConfigError(f"fanout must be >= 1, got {self.fanout}")
        if self.screening_batch_size < 1:
            raise ConfigError(f"screening_batch_size must be >= 1, got {self.screening_batch_size}")
        unknown = set(self.models) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages in models: {sorted(unknown)}")

    def route(self, stage: str) -> str:
        try:
            return self.models[stage]
        except KeyError:
            raise ConfigError(f"no model configured for stage {stage!r}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["models"] = dict(self.models)
        d["extra_params"] = dict(self.extra_params)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, **changes: Any) -> StageModelConfig:
        d = self.to_dict()
        d.update(changes)
        return config_from_dict(d)


def config_from_dict(raw: Mapping[str, Any]) -> StageModelConfig:
    raw = dict(raw)
    known = set(StageModelConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    models = dict(DEFAULT_MODELS)
    models.update(raw.pop("models", None) or {})
    backoff = raw.pop("backoff", None) or {}
    try:
        return StageModelConfig(models=models, backoff=Backoff(**backoff), **raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> StageModelConfig:
    if path is None:
        return StageModelConfig()
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    return config_from_dict(raw)

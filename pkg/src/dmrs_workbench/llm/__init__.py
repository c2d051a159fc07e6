from .cache import ResponseCache
from .client import (
    CompletionRequest,
    CompletionResult,
    FatalTransportError,
    Gateway,
    GatewayError,
    Provenance,
    RateLimited,
    SchemaError,
    ScriptExhausted,
    TransportError,
)
from .config import STAGES, Backoff, StageModelConfig, config_from_dict, load_config
from .http import HttpProvider
from .mock import MockProvider

__all__ = [
    "Backoff",
    "CompletionRequest",
    "CompletionResult",
    "FatalTransportError",
    "Gateway",
    "GatewayError",
    "HttpProvider",
    "MockProvider",
    "Provenance",
    "RateLimited",
    "ResponseCache",
    "STAGES",
    "SchemaError",
    "ScriptExhausted",
    "StageModelConfig",
    "TransportError",
    "config_from_dict",
    "load_config",
    "mock_provider",
]


def mock_provider(script=None, seed: int | None = None) -> MockProvider:
    """Build a mock from a script (mapping or file path) or from a bare seed."""
    if script is None:
        return MockProvider(seed=seed)
    if isinstance(script, (list, tuple)):
        return MockProvider(transcript=script, seed=seed)
    return MockProvider.from_script(script)

"""Loading and checking the JSON schemas that stage outputs must satisfy."""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from typing import Any

from jsonschema import Draft202012Validator

_FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.DOTALL)


@lru_cache(maxsize=None)
def load_schema(schema_id: str) -> dict:
    path = resources.files("dmrs_workbench") / "data" / "schemas" / f"{schema_id}.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise KeyError(f"unknown schema id {schema_id!r}") from None


@lru_cache(maxsize=None)
def _validator(schema_id: str) -> Draft202012Validator:
    return Draft202012Validator(load_schema(schema_id))


def extract_json(raw: str) -> Any:
    """Parse a JSON object out of a model response, tolerating code fences and chatter."""
    text = raw.strip()
    m = _FENCE.match(text)
    if m:
        text = m.group(1)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    start, end = text.find("{"), text.rfind("}")
    if start != -1 and end > start:
        return json.loads(text[start : end + 1])
    raise ValueError("response contains no JSON object")


def schema_violation(payload: Any, schema_id: str) -> str | None:
    errors = sorted(_validator(schema_id).iter_errors(payload), key=lambda e: list(e.absolute_path))
    if not errors:
        return None
    err = errors[0]
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    return f"{where}: {err.message}"

"""Prompt templates with ``{{name}}`` placeholders."""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import TemplateError
from .taxonomy import LEVELS

_PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")

TEMPLATE_NAMES = ("stressor", "screening", "screening_batch", "validation", "synthesis", "zero_shot")


def placeholders(template: str) -> set[str]:
    return set(_PLACEHOLDER.findall(template))


def render(template: str, values: Mapping[str, object]) -> str:
    missing = placeholders(template) - set(values)
    if missing:
        raise TemplateError(f"template placeholders without values: {sorted(missing)}")
    # Single pass: substituted text is never rescanned for placeholders.
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), template)


def builtin_template(name: str) -> str:
    try:
        return (resources.files("dmrs_workbench") / "data" / "templates" / f"{name}.txt").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise TemplateError(f"no built-in template named {name!r}") from None


def load_templates(directory: str | Path | None = None) -> dict[str, str]:
    """Built-in templates, overridden by any ``<name>.txt`` found in ``directory``."""
    templates = {name: builtin_template(name) for name in TEMPLATE_NAMES}
    if directory is not None:
        for name in TEMPLATE_NAMES:
            path = Path(directory) / f"{name}.txt"
            if path.exists():
                templates[name] = path.read_text(encoding="utf-8")
    return templates


def label_key() -> str:
    lines = []
    for level in LEVELS:
        mech = f" ({', '.join(level.mechanisms)})" if level.mechanisms else ""
        lines.append(f"{level.code}: {level.name}{mech}")
    return "\n".join(lines)

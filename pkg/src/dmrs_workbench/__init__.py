"""Workbench for analysing psychological defense mechanisms in support dialogues."""

from __future__ import annotations

__version__ = "0.1.0"

from .taxonomy import LEVELS, DefenseCategory, ScoreMapping, category_of, level_from_code, load_item_registry  # noqa: E402

__all__ = [
    "LEVELS",
    "DefenseCategory",
    "ScoreMapping",
    "__version__",
    "category_of",
    "level_from_code",
    "load_item_registry",
]

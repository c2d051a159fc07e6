"""DMRS defense levels, their four-way category roll-up, and the descriptive item registry.

The label space is the seven DMRS adaptiveness levels plus two conversational
labels: 0 (no defense) and 8 (needs more information).
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from .errors import OutOfRange, ParseError, ValidationError

REGISTRY_SIZE = 150


@dataclass(frozen=True)
class DefenseLevel:
    code: int
    name: str
    mechanisms: tuple[str, ...] = ()

    @property
    def short_name(self) -> str:
        return self.name.removesuffix(" Defenses")


LEVELS: tuple[DefenseLevel, ...] = (
    DefenseLevel(0, "No Defenses"),
    DefenseLevel(1, "Action Defenses", ("Passive Aggression", "Help-Rejecting Complaining", "Acting Out")),
    DefenseLevel(
        2,
        "Major Image-Distorting Defenses",
        ("Splitting (of self-image and others' image)", "Projective Identification"),
    ),
    DefenseLevel(3, "Disavowal Defenses", ("Denial", "Rationalization", "Projection", "Autistic Fantasy")),
    DefenseLevel(
        4,
        "Minor Image-Distorting Defenses",
        (
            "Devaluation (of self-image and others' image)",
            "Idealization (of self-image and others' image)",
            "Omnipotence",
        ),
    ),
    DefenseLevel(5, "Neurotic Defenses", ("Repression", "Dissociation", "Reaction Formation", "Displacement")),
    DefenseLevel(6, "Obsessional Defenses", ("Isolation of Affect", "Intellectualization", "Undoing")),
    DefenseLevel(
        7,
        "High-Adaptive Defenses",
        (
            "Affiliation",
            "Altruism",
            "Anticipation",
            "Humor",
            "Self-Assertion",
            "Self-Observation",
            "Sublimation",
            "Suppression",
        ),
    ),
    DefenseLevel(8, "Needs More Information"),
)

LEVEL_CODES = tuple(level.code for level in LEVELS)
DMRS_CODES = tuple(range(1, 8))


def level_from_code(code: int) -> DefenseLevel:
    if isinstance(code, bool) or not isinstance(code, int) or not 0 <= code <= 8:
        raise OutOfRange(f"defense level must be an integer in 0..8, got {code!r}")
    return LEVELS[code]


def level_from_name(name: str) -> DefenseLevel:
    key = name.strip().lower()
    for level in LEVELS:
        if key in (level.name.lower(), level.short_name.lower()):
            return level
    raise OutOfRange(f"unknown defense level name {name!r}")


class DefenseCategory(str, Enum):
    NO_DEFENSE = "NoDefense"
    MATURE = "Mature"
    NEUROTIC = "Neurotic"
    IMMATURE = "Immature"

    @property
    def codes(self) -> tuple[int, ...]:
        return CATEGORY_CODES[self]

    @property
    def label(self) -> str:
        return {
            DefenseCategory.NO_DEFENSE: "No Defense",
            DefenseCategory.MATURE: "Mature Defenses",
            DefenseCategory.NEUROTIC: "Neurotic Defenses",
            DefenseCategory.IMMATURE: "Immature Defenses",
        }[self]


CATEGORY_CODES: dict[DefenseCategory, tuple[int, ...]] = {
    DefenseCategory.NO_DEFENSE: (0, 8),
    DefenseCategory.MATURE: (7,),
    DefenseCategory.NEUROTIC: (5, 6),
    DefenseCategory.IMMATURE: (1, 2, 3, 4),
}
_CATEGORY_BY_CODE = {code: cat for cat, codes in CATEGORY_CODES.items() for code in codes}


def category_of(level: DefenseLevel | int) -> DefenseCategory:
    code = level.code if isinstance(level, DefenseLevel) else level_from_code(level).code
    return _CATEGORY_BY_CODE[code]


def aggregate_categories(level_counts: Mapping[int, int]) -> dict[DefenseCategory, int]:
    """Roll per-level counts up into category counts (every category present, possibly 0)."""
    out = {cat: 0 for cat in DefenseCategory}
    for code, count in level_counts.items():
        out[category_of(code)] += count
    return out


@dataclass(frozen=True)
class ScoreMapping:
    """Level code -> immaturity score; ``None`` marks a level excluded from scoring."""

    scores: Mapping[int, float | None]
    name: str = "custom"

    def __post_init__(self) -> None:
        missing = set(LEVEL_CODES) - set(self.scores)
        if missing:
            raise ValidationError(f"score mapping lacks levels {sorted(missing)}")

    @classmethod
    def default(cls) -> ScoreMapping:
        scores: dict[int, float | None] = {0: 0.0, 8: None}
        scores.update({code: float(8 - code) for code in DMRS_CODES})
        return cls(scores, name="default")

    @classmethod
    def from_file(cls, path: str | Path) -> ScoreMapping:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        scores = {int(k): (None if v in (None, "excluded") else float(v)) for k, v in raw.items()}
        return cls(scores, name=Path(path).stem)


def immaturity_score(level: DefenseLevel | int, mapping: ScoreMapping | None = None) -> float | None:
    code = level.code if isinstance(level, DefenseLevel) else level_from_code(level).code
    return (mapping or ScoreMapping.default()).scores[code]


# -- descriptive items -------------------------------------------------------


def _mechanism_key(name: str) -> str:
    name = re.sub(r"\(.*?\)", "", name).strip().lower()
    return re.sub(r"\s+", " ", name)


def mechanism_matches_level(mechanism: str, level: DefenseLevel) -> bool:
    # "Splitting of others' image" is a sub-form of the listed "Splitting (...)".
    key = _mechanism_key(mechanism)
    for listed in level.mechanisms:
        base = _mechanism_key(listed)
        if key == base or key.startswith(base + " of "):
            return True
    return False


@dataclass(frozen=True)
class DmrsItem:
    id: int
    mechanism: str
    level: int
    description: str

    def to_dict(self) -> dict:
        return {"id": self.id, "mechanism": self.mechanism, "level": self.level, "description": self.description}


@dataclass(frozen=True)
class ItemRegistry:
    items: tuple[DmrsItem, ...]
    _by_id: dict[int, DmrsItem] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_by_id", {item.id: item for item in self.items})

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __contains__(self, item_id: object) -> bool:
        return item_id in self._by_id

    def __getitem__(self, item_id: int) -> DmrsItem:
        return self._by_id[item_id]

    @property
    def ids(self) -> list[int]:
        return [item.id for item in self.items]


def validate_items(items: Iterable[DmrsItem], strict: bool = True) -> ItemRegistry:
    items = tuple(items)
    seen: set[int] = set()
    for item in items:
        if item.id in seen:
            raise ValidationError(f"duplicate id {item.id}")
        seen.add(item.id)
        if strict and not 1 <= item.id <= REGISTRY_SIZE:
            raise ValidationError(f"item {item.id}: id outside 1..{REGISTRY_SIZE}")
        if not 1 <= item.level <= 7:
            raise ValidationError(f"item {item.id}: level {item.level} outside 1..7")
        if not mechanism_matches_level(item.mechanism, LEVELS[item.level]):
            raise ValidationError(
                f"item {item.id}: mechanism {item.mechanism!r} is not listed under level {item.level}"
            )
        if not item.description.strip():
            raise ValidationError(f"item {item.id}: empty description")
    if strict and len(items) != REGISTRY_SIZE:
        raise ValidationError(f"registry has {len(items)} items, expected {REGISTRY_SIZE}")
    return ItemRegistry(tuple(sorted(items, key=lambda it: it.id)))


def load_item_registry(source: str | Path, strict: bool = True) -> ItemRegistry:
    """Load a registry file: a JSON array of ``{id, mechanism, level, description}``.

    ``strict`` demands exactly 150 items with ids in 1..150; relax it for small fixtures.
    """
    try:
        raw = json.loads(Path(source).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read registry {source}: {exc}") from exc
    if isinstance(raw, dict) and "items" in raw:
        raw = raw["items"]
    if not isinstance(raw, list):
        raise ParseError("registry must be a JSON array of item records")
    items = []
    for i, rec in enumerate(raw):
        try:
            item_id = rec["id"]
            level = rec["level"]
            if isinstance(item_id, bool) or not isinstance(item_id, int):
                raise ValidationError(f"item at position {i}: id must be an integer")
            if isinstance(level, bool) or not isinstance(level, int):
                raise ValidationError(f"item {item_id}: level must be an integer")
            items.append(DmrsItem(item_id, str(rec["mechanism"]), level, str(rec["description"])))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"missing field {exc}", record=i) from exc
    return validate_items(items, strict=strict)


def level_counts(codes: Iterable[int]) -> dict[int, int]:
    counts = Counter(level_from_code(c).code for c in codes)
    return {code: counts.get(code, 0) for code in LEVEL_CODES}

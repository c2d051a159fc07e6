"""Double-annotation bookkeeping and pre-annotation export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from .copilot import AnalysisResult
from .corpus import Dialogue, Utterance
from .errors import (
    DegenerateMarginals,
    JoinError,
    KeyMismatch,
    MissingAdjudication,
    ParseError,
    SpuriousAdjudication,
    ValidationError,
)
from .taxonomy import LEVEL_CODES, level_from_code

Key = tuple[str, int]
N_LABELS = len(LEVEL_CODES)


@dataclass(frozen=True)
class AnnotationRecord:
    dialogue_id: str
    utterance_index: int
    annotator: str
    level: int
    helpful: bool | None = None

    def __post_init__(self) -> None:
        level_from_code(self.level)

    @property
    def key(self) -> Key:
        return (self.dialogue_id, self.utterance_index)


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    out = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(
                AnnotationRecord(
                    str(rec["dialogue_id"]),
                    int(rec["utterance_index"]),
                    str(rec.get("annotator", "")),
                    int(rec["level"]),
                    rec.get("helpful"),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad annotation record: {exc}", record=i) from exc
    return out


def split_by_annotator(records: Iterable[AnnotationRecord]) -> dict[str, list[AnnotationRecord]]:
    out: dict[str, list[AnnotationRecord]] = {}
    for r in records:
        out.setdefault(r.annotator, []).append(r)
    return out


Labels = Union[Mapping[Key, int], Iterable[AnnotationRecord]]


def _as_labels(labels: Labels) -> dict[Key, int]:
    if isinstance(labels, Mapping):
        return {k: level_from_code(v).code for k, v in labels.items()}
    out: dict[Key, int] = {}
    for r in labels:
        if r.key in out:
            raise ValidationError(f"duplicate annotation for {r.key} by {r.annotator!r}")
        out[r.key] = r.level
    return out


def _paired(a1: Labels, a2: Labels) -> tuple[list[Key], dict[Key, int], dict[Key, int]]:
    l1, l2 = _as_labels(a1), _as_labels(a2)
    if l1.keys() != l2.keys():
        raise KeyMismatch(sorted(l1.keys() - l2.keys()), sorted(l2.keys() - l1.keys()))
    return sorted(l1), l1, l2


@dataclass(frozen=True)
class AgreementReport:
    n: int
    observed: float
    expected: float
    kappa: float
    confusion: tuple[tuple[int, ...], ...]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "observed_agreement": self.observed,
            "expected_agreement": self.expected,
            "kappa": self.kappa,
            "labels": list(LEVEL_CODES),
            "confusion": [list(row) for row in self.confusion],
        }


def cohen_kappa(a1: Labels, a2: Labels) -> AgreementReport:
    """Unweighted Cohen's kappa over the nine-label space.

    Rows of ``confusion`` are the first annotator's labels, columns the second's.
    """
    keys, l1, l2 = _paired(a1, a2)
    n = len(keys)
    if n == 0:
        raise ValidationError("no annotated items")
    confusion = [[0] * N_LABELS for _ in range(N_LABELS)]
    for k in keys:
        confusion[l1[k]][l2[k]] += 1
    rows = [sum(r) for r in confusion]
    cols = [sum(confusion[i][j] for i in range(N_LABELS)) for j in range(N_LABELS)]
    agree = sum(confusion[i][i] for i in range(N_LABELS))
    chance = sum(r * c for r, c in zip(rows, cols))
    if chance == n * n:
        raise DegenerateMarginals("both annotators used one and the same label throughout; kappa is undefined")
    p_o = agree / n
    p_e = chance / (n * n)
    kappa = (p_o - p_e) / (1 - p_e)
    return AgreementReport(n, p_o, p_e, kappa, tuple(tuple(r) for r in confusion))


def disagreements(a1: Labels, a2: Labels) -> list[tuple[Key, int, int]]:
    keys, l1, l2 = _paired(a1, a2)
    return [(k, l1[k], l2[k]) for k in keys if l1[k] != l2[k]]


def helpful_rate(a1: Iterable[AnnotationRecord], a2: Iterable[AnnotationRecord]) -> float:
    """Share of jointly annotated items that both annotators marked helpful."""
    h1 = {r.key: r.helpful for r in a1}
    h2 = {r.key: r.helpful for r in a2}
    keys = h1.keys() & h2.keys()
    if not keys:
        return 0.0
    return sum(1 for k in keys if h1[k] is True and h2[k] is True) / len(keys)


class GoldSource(str, Enum):
    AGREED = "Agreed"
    ADJUDICATED = "Adjudicated"


@dataclass(frozen=True)
class GoldRecord:
    dialogue_id: str
    utterance_index: int
    level: int
    source: GoldSource

    @property
    def key(self) -> Key:
        return (self.dialogue_id, self.utterance_index)

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "utterance_index": self.utterance_index,
            "level": self.level,
            "source": self.source.value,
        }


def merge_gold(a1: Labels, a2: Labels, adjudications: Labels) -> list[GoldRecord]:
    keys, l1, l2 = _paired(a1, a2)
    adj = _as_labels(adjudications)
    disputed = {k for k in keys if l1[k] != l2[k]}
    missing = sorted(disputed - adj.keys())
    if missing:
        raise MissingAdjudication(missing)
    spurious = sorted(adj.keys() - disputed)
    if spurious:
        raise SpuriousAdjudication(spurious)
    return [
        GoldRecord(k[0], k[1], adj[k], GoldSource.ADJUDICATED)
        if k in disputed
        else GoldRecord(k[0], k[1], l1[k], GoldSource.AGREED)
        for k in keys
    ]


def load_adjudications(path: str | Path) -> dict[Key, int]:
    return {r.key: r.level for r in load_annotations(path)}


def apply_gold(dialogues: Sequence[Dialogue], gold: Iterable[GoldRecord]) -> list[Dialogue]:
    """Attach gold levels to seeker turns; raises JoinError for keys absent from the corpus."""
    by_key = {g.key: g.level for g in gold}
    out = []
    seen: set[Key] = set()
    for d in dialogues:
        turns = []
        for t in d.turns:
            level = by_key.get((d.id, t.index))
            if level is not None:
                seen.add((d.id, t.index))
            turns.append(Utterance(t.index, t.role, t.text, level))
        out.append(Dialogue(d.id, d.problem, d.emotion, d.situation, tuple(turns)))
    orphans = sorted(by_key.keys() - seen)
    if orphans:
        raise JoinError(f"{len(orphans)} gold labels do not match corpus utterances: {orphans[:5]}")
    return out


# -- pre-annotation export ------------------------------------------------------------

MODEL_VERSION = "dmrs-copilot"


def export_preannotations(results: Iterable[AnalysisResult], dialogues: Sequence[Dialogue]) -> list[dict]:
    """One labelling task per analysed seeker instance, with the primary level pre-selected.

    Tasks follow the common ``{data, predictions}`` import layout; ``data.context`` carries
    the causal dialogue prefix with the target turn flagged ``highlight``.
    """
    by_id = {d.id: d for d in dialogues}
    tasks = []
    for n, r in enumerate(sorted(results, key=lambda r: r.key), start=1):
        d = by_id.get(r.dialogue_id)
        if d is None or not 0 <= r.utterance_index < len(d.turns):
            raise JoinError(f"result {r.key} has no matching corpus utterance")
        target = d.turns[r.utterance_index]
        c1, c2 = r.conclusions
        context = [
            {"index": t.index, "role": t.role.value, "text": t.text, "highlight": t.index == target.index}
            for t in d.turns[: target.index + 1]
        ]
        validated = "\n".join(f"item {v.item_id} ({v.confidence.value}): {v.evidence}" for v in r.validated)
        secondary = f"Level {c2.level} {c2.level_name}: {c2.rationale}"
        primary = f"Level {c1.level} {c1.level_name}: {c1.rationale}"
        tasks.append(
            {
                "id": n,
                "data": {
                    "dialogue_id": d.id,
                    "utterance_index": target.index,
                    "situation": d.situation,
                    "context": context,
                    "target": target.text,
                    "stressor": r.stressor.text,
                    "primary_conclusion": primary,
                    "secondary_conclusion": secondary,
                    "validated_items": validated,
                },
                "predictions": [
                    {
                        "model_version": MODEL_VERSION,
                        "score": 0.0 if c1.fallback else 1.0,
                        "result": [
                            {"from_name": "level", "to_name": "target", "type": "choices",
                             "value": {"choices": [c1.level_name]}},
                            {"from_name": "secondary_level", "to_name": "target", "type": "choices",
                             "value": {"choices": [c2.level_name]}},
                            {"from_name": "stressor", "to_name": "target", "type": "textarea",
                             "value": {"text": [r.stressor.text]}},
                            {"from_name": "evidence", "to_name": "target", "type": "textarea",
                             "value": {"text": [validated or "(no validated items)"]}},
                        ],
                    }
                ],
            }
        )
    return tasks


def dump_tasks(tasks: list[dict], path: str | Path) -> None:
    Path(path).write_text(json.dumps(tasks, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")

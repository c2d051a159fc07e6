"""Dialogue ingestion, stratified subset selection, seeker instances and corpus statistics."""

from __future__ import annotations

import json
import logging
import math
import random
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

from .errors import InsufficientStratum, ParseError, ValidationError
from .taxonomy import level_from_code

log = logging.getLogger(__name__)

CORE_PROBLEMS = (
    "ongoing depression",
    "job crisis",
    "breakup with partner",
    "problems with friends",
    "academic pressure",
)
CORE_EMOTIONS = ("anxiety", "depression", "sadness", "fear", "anger", "shame")


class Role(str, Enum):
    SEEKER = "seeker"
    SUPPORTER = "supporter"


_ROLE_ALIASES = {
    "seeker": Role.SEEKER,
    "usr": Role.SEEKER,
    "user": Role.SEEKER,
    "supporter": Role.SUPPORTER,
    "sys": Role.SUPPORTER,
    "system": Role.SUPPORTER,
}


def normalize_role(value: str) -> Role:
    try:
        return _ROLE_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise ValidationError(f"unknown speaker role {value!r}") from None


def normalize_type(value: str) -> str:
    return " ".join(str(value).strip().lower().replace("_", " ").split())


def display_type(value: str) -> str:
    return " ".join(w.capitalize() for w in value.split())


@dataclass(frozen=True)
class Utterance:
    index: int
    role: Role
    text: str
    level: int | None = None


@dataclass(frozen=True)
class Dialogue:
    id: str
    problem: str
    emotion: str
    situation: str
    turns: tuple[Utterance, ...]

    @property
    def stratum(self) -> tuple[str, str]:
        return (self.problem, self.emotion)

    @property
    def seeker_turns(self) -> list[Utterance]:
        return [t for t in self.turns if t.role is Role.SEEKER]


def validate_dialogue(dialogue: Dialogue, strict: bool = True) -> None:
    if not dialogue.turns:
        raise ValidationError(f"dialogue {dialogue.id}: no turns")
    for pos, turn in enumerate(dialogue.turns):
        if turn.index != pos:
            raise ValidationError(f"dialogue {dialogue.id}: turn {pos} carries index {turn.index}")
        if not turn.text.strip():
            raise ValidationError(f"dialogue {dialogue.id}: turn {pos} has empty text")
        if turn.level is not None:
            level_from_code(turn.level)
    if not dialogue.seeker_turns:
        raise ValidationError(f"dialogue {dialogue.id}: no seeker turn")
    if strict:
        if dialogue.problem not in CORE_PROBLEMS:
            raise ValidationError(f"dialogue {dialogue.id}: problem {dialogue.problem!r} not a core problem type")
        if dialogue.emotion not in CORE_EMOTIONS:
            raise ValidationError(f"dialogue {dialogue.id}: emotion {dialogue.emotion!r} not a core emotion type")


def _finalize(dialogues: Iterable[Dialogue], strict: bool) -> list[Dialogue]:
    out = []
    for d in dialogues:
        try:
            validate_dialogue(d, strict=strict)
        except ValidationError as exc:
            if strict:
                raise
            log.warning("skipping %s", exc)
            continue
        out.append(d)
    return out


def ingest_esconv(source: str | Path, strict: bool = True, id_prefix: str = "esconv") -> list[Dialogue]:
    """Load an ESConv-style JSON array of dialogues.

    Each record needs ``problem_type``, ``emotion_type``, ``situation`` and ``dialog``
    (a list of ``{speaker, content}``). Dialogue ids default to the record position.
    In lenient mode invalid dialogues are skipped and non-core types are kept.
    """
    try:
        raw = json.loads(Path(source).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read {source}: {exc}") from exc
    if not isinstance(raw, list):
        raise ParseError("ESConv input must be a JSON array of dialogues")

    dialogues = []
    for i, rec in enumerate(raw):
        if not isinstance(rec, dict):
            raise ParseError("dialogue record is not an object", record=i)
        try:
            turns = []
            for j, turn in enumerate(rec["dialog"]):
                if "speaker" not in turn:
                    raise ParseError(f"turn {j} lacks a speaker field", record=i)
                if "content" not in turn:
                    raise ParseError(f"turn {j} lacks a content field", record=i)
                try:
                    role = normalize_role(turn["speaker"])
                except ValidationError as exc:
                    raise ParseError(str(exc), record=i) from exc
                turns.append(Utterance(j, role, str(turn["content"]).strip()))
            dialogues.append(
                Dialogue(
                    id=str(rec.get("dialogue_id") or f"{id_prefix}-{i:04d}"),
                    problem=normalize_type(rec["problem_type"]),
                    emotion=normalize_type(rec["emotion_type"]),
                    situation=str(rec.get("situation") or "").strip(),
                    turns=tuple(turns),
                )
            )
        except KeyError as exc:
            raise ParseError(f"missing field {exc}", record=i) from exc
    return _finalize(dialogues, strict)


# -- canonical line-delimited corpus ---------------------------------------------


def load_corpus(source: str | Path, strict: bool = False) -> list[Dialogue]:
    """Read the canonical corpus: one JSON record per utterance.

    Records carry ``dialogue_id, utterance_index, role, problem, emotion, text`` and
    optionally ``situation`` and ``level`` (seeker turns of a gold corpus). Records
    without ``role`` are taken as seeker turns.
    """
    grouped: dict[str, list[dict]] = defaultdict(list)
    order: list[str] = []
    try:
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ParseError(f"cannot read {source}: {exc}") from exc
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            did = str(rec["dialogue_id"])
            rec["utterance_index"] = int(rec["utterance_index"])
            for name in ("text", "problem", "emotion"):
                if name not in rec:
                    raise KeyError(name)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", record=i) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"missing or malformed field {exc}", record=i) from exc
        if did not in grouped:
            order.append(did)
        grouped[did].append(rec)

    dialogues = []
    for did in order:
        recs = sorted(grouped[did], key=lambda r: r["utterance_index"])
        turns = []
        for r in recs:
            level = r.get("level")
            try:
                role = normalize_role(r.get("role", "seeker"))
            except ValidationError as exc:
                raise ParseError(f"dialogue {did}: {exc}") from exc
            turns.append(Utterance(r["utterance_index"], role, str(r["text"]), None if level is None else int(level)))
        situation = next((str(r["situation"]) for r in recs if r.get("situation")), "")
        dialogues.append(
            Dialogue(did, normalize_type(recs[0]["problem"]), normalize_type(recs[0]["emotion"]), situation, tuple(turns))
        )
    return _finalize(dialogues, strict)


def corpus_records(dialogues: Iterable[Dialogue]) -> list[dict]:
    out = []
    for d in dialogues:
        for t in d.turns:
            rec = {
                "dialogue_id": d.id,
                "utterance_index": t.index,
                "role": t.role.value,
                "problem": d.problem,
                "emotion": d.emotion,
                "text": t.text,
                "level": t.level,
            }
            if t.index == 0 and d.situation:
                rec["situation"] = d.situation
            out.append(rec)
    return out


def write_corpus(dialogues: Iterable[Dialogue], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus_records(dialogues):
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def validate_gold(dialogues: Iterable[Dialogue]) -> list[str]:
    """Check handbook labelling rules; returns human-readable problems (empty when clean).

    Only seeker turns are labelled, and every seeker turn carries a level in 0..8.
    """
    issues = []
    for d in dialogues:
        for t in d.turns:
            if t.role is Role.SUPPORTER and t.level is not None:
                issues.append(f"{d.id}#{t.index}: supporter turn carries a level")
            if t.role is Role.SEEKER and t.level is None:
                issues.append(f"{d.id}#{t.index}: seeker turn lacks a level")
    return issues


# -- stratified sampling ----------------------------------------------------------


def _stratum_sort_key(key: Hashable) -> str:
    return json.dumps(key, sort_keys=True, default=str)


def apportion(counts: Mapping[Hashable, int], n: int) -> dict[Hashable, int]:
    """Largest-remainder apportionment of ``n`` seats over stratum frequencies.

    Ties on the remainder go to the larger stratum, then to the lexicographically
    smaller stratum key.
    """
    total = sum(counts.values())
    if n < 0 or (total == 0 and n > 0):
        raise ValueError(f"cannot apportion {n} over {total} units")
    if n == 0:
        return {k: 0 for k in counts}
    exact = {k: n * c / total for k, c in counts.items()}
    quotas = {k: int(math.floor(e)) for k, e in exact.items()}
    # Remainders via integer arithmetic so ties are exact.
    remainder = {k: n * c - quotas[k] * total for k, c in counts.items()}
    left = n - sum(quotas.values())
    ranked = sorted(counts, key=lambda k: (-remainder[k], -counts[k], _stratum_sort_key(k)))
    for k in ranked[:left]:
        quotas[k] += 1
    return quotas


def stratified_sample(dialogues: Sequence[Dialogue], n: int, seed: int) -> list[Dialogue]:
    if n > len(dialogues):
        raise ValueError(f"requested {n} dialogues from a pool of {len(dialogues)}")
    strata: dict[tuple[str, str], list[Dialogue]] = defaultdict(list)
    for d in dialogues:
        strata[d.stratum].append(d)
    quotas = apportion({k: len(v) for k, v in strata.items()}, n)
    chosen: list[Dialogue] = []
    for key in sorted(strata, key=_stratum_sort_key):
        pool = sorted(strata[key], key=lambda d: d.id)
        if quotas[key] > len(pool):
            raise InsufficientStratum(key, quotas[key], len(pool))
        rng = random.Random(f"{seed}|{key[0]}|{key[1]}")
        chosen.extend(rng.sample(pool, quotas[key]))
    chosen.sort(key=lambda d: d.id)
    return chosen


# -- instances ------------------------------------------------------------------------


@dataclass(frozen=True)
class SeekerInstance:
    dialogue_id: str
    utterance_index: int
    context: tuple[Utterance, ...]
    target: Utterance
    situation: str = ""
    problem: str = ""
    emotion: str = ""
    gold_level: int | None = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.dialogue_id, self.utterance_index)


def build_instances(dialogue: Dialogue) -> list[SeekerInstance]:
    out = []
    for pos, turn in enumerate(dialogue.turns):
        if turn.role is not Role.SEEKER:
            continue
        out.append(
            SeekerInstance(
                dialogue_id=dialogue.id,
                utterance_index=turn.index,
                context=dialogue.turns[: pos + 1],
                target=turn,
                situation=dialogue.situation,
                problem=dialogue.problem,
                emotion=dialogue.emotion,
                gold_level=turn.level,
            )
        )
    return out


def all_instances(dialogues: Iterable[Dialogue]) -> list[SeekerInstance]:
    return [inst for d in dialogues for inst in build_instances(d)]


# -- statistics ------------------------------------------------------------------------


def token_length(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class MeanSd:
    mean: float = 0.0
    sd: float = 0.0

    @classmethod
    def of(cls, values: Sequence[float]) -> MeanSd:
        if not values:
            return cls()
        return cls(statistics.fmean(values), statistics.pstdev(values))

    def __str__(self) -> str:
        return f"{self.mean:.1f} ± {self.sd:.1f}"


@dataclass(frozen=True)
class StatsReport:
    dialogues: int = 0
    utterances: int = 0
    supporter_utterances: int = 0
    seeker_utterances: int = 0
    turns: dict[str, MeanSd] = field(default_factory=dict)
    lengths: dict[str, MeanSd] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "dialogues": self.dialogues,
            "utterances": {
                "total": self.utterances,
                "supporter": self.supporter_utterances,
                "seeker": self.seeker_utterances,
            },
            "turns_per_dialogue": {k: {"mean": v.mean, "sd": v.sd} for k, v in self.turns.items()},
            "utterance_length": {k: {"mean": v.mean, "sd": v.sd} for k, v in self.lengths.items()},
        }

    def format_table(self) -> str:
        rows = [
            ("Category", "Total", "Supporter", "Seeker"),
            ("# Dialogues", str(self.dialogues), "--", "--"),
            (
                "# Utterances",
                f"{self.utterances:,}",
                f"{self.supporter_utterances:,}",
                f"{self.seeker_utterances:,}",
            ),
            ("Avg. Turns per Dialogue", *(str(self.turns[k]) for k in ("total", "supporter", "seeker"))),
            ("Avg. Length of Utterances", *(str(self.lengths[k]) for k in ("total", "supporter", "seeker"))),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        return "\n".join(
            "  ".join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(r))
            for r in rows
        )


def corpus_stats(dialogues: Sequence[Dialogue]) -> StatsReport:
    """Counts, turns per dialogue and whitespace-token utterance lengths (population sd)."""
    per_role_turns: dict[str, list[int]] = {"total": [], "supporter": [], "seeker": []}
    lengths: dict[str, list[int]] = {"total": [], "supporter": [], "seeker": []}
    for d in dialogues:
        n_sup = n_seek = 0
        for t in d.turns:
            n = token_length(t.text)
            lengths["total"].append(n)
            lengths[t.role.value].append(n)
            if t.role is Role.SEEKER:
                n_seek += 1
            else:
                n_sup += 1
        per_role_turns["total"].append(n_sup + n_seek)
        per_role_turns["supporter"].append(n_sup)
        per_role_turns["seeker"].append(n_seek)

    report = StatsReport(
        dialogues=len(dialogues),
        utterances=len(lengths["total"]),
        supporter_utterances=len(lengths["supporter"]),
        seeker_utterances=len(lengths["seeker"]),
        turns={k: MeanSd.of(v) for k, v in per_role_turns.items()},
        lengths={k: MeanSd.of(v) for k, v in lengths.items()},
    )
    assert report.utterances == report.supporter_utterances + report.seeker_utterances
    return report


def type_distribution(dialogues: Sequence[Dialogue]) -> dict[str, dict[str, int]]:
    return {
        "problem": dict(sorted(Counter(d.problem for d in dialogues).items())),
        "emotion": dict(sorted(Counter(d.emotion for d in dialogues).items())),
    }

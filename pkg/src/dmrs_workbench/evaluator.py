"""Zero-shot level classification harness and benchmark metrics."""

from __future__ import annotations

import csv
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import SeekerInstance
from .errors import KeyMismatch, TemplateError
from .llm.client import Gateway, GatewayError
from .prompts import label_key, placeholders, render
from .taxonomy import LEVEL_CODES, LEVELS

Key = tuple[str, int]
POSITIVE_CLASSES = tuple(range(1, 9))
INVALID = "Invalid"
INVALID_COLUMN = len(LEVEL_CODES)  # reserved confusion column for unparseable predictions

STRICT_SUFFIX = (
    "\n\nYour previous reply did not state a defense level. "
    "Reply with exactly one integer from 0 to 8 and nothing else."
)

_CUED = re.compile(r"level\b[^0-9\n]{0,24}?\b([0-8])\b(?!\.\d)", re.IGNORECASE)
_BARE = re.compile(r"\W*([0-8])\W*")


def parse_level(text: str) -> int | None:
    """Last integer 0-8 that follows a "level" cue, else a response that is only an integer."""
    cued = _CUED.findall(text)
    if cued:
        return int(cued[-1])
    m = _BARE.fullmatch(text.strip())
    return int(m.group(1)) if m else None


@dataclass(frozen=True)
class Prediction:
    dialogue_id: str
    utterance_index: int
    level: int | None
    raw: str = ""
    attempts: int = 0
    reason: str | None = None

    @property
    def key(self) -> Key:
        return (self.dialogue_id, self.utterance_index)

    @property
    def invalid(self) -> bool:
        return self.level is None

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "utterance_index": self.utterance_index,
            "level": INVALID if self.level is None else self.level,
            "raw": self.raw,
            "attempts": self.attempts,
            "reason": self.reason,
        }


def write_predictions(predictions: Iterable[Prediction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps(p.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_predictions(path: str | Path) -> list[Prediction]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            d = json.loads(line)
            level = None if d["level"] in (INVALID, None) else int(d["level"])
            out.append(Prediction(d["dialogue_id"], int(d["utterance_index"]), level,
                                  d.get("raw", ""), d.get("attempts", 0), d.get("reason")))
    return out


def check_template(template: str) -> None:
    names = placeholders(template)
    missing = {"context", "target"} - names
    if missing:
        raise TemplateError(f"zero-shot template lacks placeholders {sorted(missing)}")
    if "label_key" not in names and not all(level.name in template for level in LEVELS):
        raise TemplateError("zero-shot template must include {{label_key}} or name all nine defense levels")


def render_context(instance: SeekerInstance) -> str:
    lines = [f"Situation: {instance.situation}"] if instance.situation else []
    lines += [f"[{t.role.value.capitalize()}] {t.text}" for t in instance.context]
    return "\n".join(lines)


def predict_one(instance: SeekerInstance, template: str, gateway: Gateway) -> Prediction:
    prompt = render(
        template, {"context": render_context(instance), "target": instance.target.text, "label_key": label_key()}
    )
    attempts = 0
    raw = ""
    for text in (prompt, prompt + STRICT_SUFFIX):
        request = gateway.request(
            "zero_shot", text, None, dialogue_id=instance.dialogue_id, utterance_index=instance.utterance_index
        )
        try:
            result = gateway.complete(request)
        except GatewayError as exc:
            return Prediction(*instance.key, None, raw, attempts + exc.attempts, f"{type(exc).__name__}: {exc}")
        attempts += result.provenance.attempts
        raw = result.text
        level = parse_level(raw)
        if level is not None:
            return Prediction(*instance.key, level, raw, attempts)
    return Prediction(*instance.key, None, raw, attempts, "no level found after strict retry")


def run_zero_shot(
    instances: Sequence[SeekerInstance], template: str, gateway: Gateway, workers: int | None = None
) -> list[Prediction]:
    check_template(template)
    workers = workers or gateway.config.fanout
    if workers == 1:
        return [predict_one(inst, template, gateway) for inst in instances]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda inst: predict_one(inst, template, gateway), instances))


# -- metrics -----------------------------------------------------------------------


def _pair(predictions: Iterable[Prediction] | Mapping[Key, int | None], gold: Mapping[Key, int]):
    pred = dict(predictions) if isinstance(predictions, Mapping) else {p.key: p.level for p in predictions}
    if pred.keys() != gold.keys():
        raise KeyMismatch(sorted(pred.keys() - gold.keys()), sorted(gold.keys() - pred.keys()))
    keys = sorted(gold)
    return keys, pred


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: tuple[tuple[int, ...], ...]  # rows gold 0..8, columns predicted 0..8 + Invalid

    @property
    def n(self) -> int:
        return sum(map(sum, self.counts))

    @property
    def proportions(self) -> list[list[float]]:
        out = []
        for row in self.counts:
            total = sum(row)
            out.append([c / total if total else 0.0 for c in row])
        return out

    def to_dict(self) -> dict:
        return {
            "rows": list(LEVEL_CODES),
            "columns": [*LEVEL_CODES, INVALID],
            "counts": [list(r) for r in self.counts],
            "proportions": self.proportions,
        }


def confusion_matrix(predictions, gold: Mapping[Key, int]) -> ConfusionMatrix:
    keys, pred = _pair(predictions, gold)
    counts = [[0] * (len(LEVEL_CODES) + 1) for _ in LEVEL_CODES]
    for k in keys:
        p = pred[k]
        counts[gold[k]][INVALID_COLUMN if p is None else p] += 1
    return ConfusionMatrix(tuple(tuple(r) for r in counts))


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class MacroScores:
    classes: tuple[int, ...]
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    n: int
    accuracy: float
    macro: MacroScores  # fixed positive class set 1..8 (headline)
    macro_present: MacroScores  # positive classes seen in gold or predictions
    per_class: dict[int, ClassScores]
    confusion: ConfusionMatrix
    invalid: int

    def to_dict(self) -> dict:
        def macro(m: MacroScores) -> dict:
            return {"classes": list(m.classes), "precision": m.precision, "recall": m.recall, "f1": m.f1}

        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "invalid": self.invalid,
            "macro": macro(self.macro),
            "macro_present": macro(self.macro_present),
            "per_class": {
                str(c): {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
                for c, s in sorted(self.per_class.items())
            },
            "confusion": self.confusion.to_dict(),
        }


def _macro(per_class: Mapping[int, ClassScores], classes: Sequence[int]) -> MacroScores:
    if not classes:
        return MacroScores((), 0.0, 0.0, 0.0)
    k = len(classes)
    return MacroScores(
        tuple(classes),
        sum(per_class[c].precision for c in classes) / k,
        sum(per_class[c].recall for c in classes) / k,
        sum(per_class[c].f1 for c in classes) / k,
    )


def compute_metrics(predictions, gold: Mapping[Key, int]) -> EvalReport:
    """Accuracy over every instance; per-class and macro scores from the confusion table.

    An Invalid prediction is wrong for its gold class and counts as a prediction of no class.
    """
    cm = confusion_matrix(predictions, gold)
    counts = cm.counts
    n = cm.n
    per_class = {}
    for c in LEVEL_CODES:
        tp = counts[c][c]
        predicted = sum(counts[g][c] for g in LEVEL_CODES)
        support = sum(counts[c])
        p = tp / predicted if predicted else 0.0
        r = tp / support if support else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        per_class[c] = ClassScores(p, r, f1, support)
    correct = sum(counts[c][c] for c in LEVEL_CODES)
    present = [c for c in POSITIVE_CLASSES if per_class[c].support or sum(counts[g][c] for g in LEVEL_CODES)]
    return EvalReport(
        n=n,
        accuracy=correct / n if n else 0.0,
        macro=_macro(per_class, POSITIVE_CLASSES),
        macro_present=_macro(per_class, present),
        per_class=per_class,
        confusion=cm,
        invalid=sum(row[INVALID_COLUMN] for row in counts),
    )


# -- comparison table ------------------------------------------------------------------

COLUMNS = ("ACC", "P", "R", "F1")


def _pct(x: float) -> float:
    return round(100.0 * x + 0.0, 2)


@dataclass(frozen=True)
class ComparisonTable:
    rows: list[dict]
    per_class_f1: dict[str, list[float]]

    def to_dict(self) -> dict:
        return {"columns": list(COLUMNS), "rows": self.rows, "per_class_f1": self.per_class_f1}

    def to_markdown(self) -> str:
        lines = ["| Model | " + " | ".join(COLUMNS) + " |", "|---|" + "---:|" * len(COLUMNS)]
        for row in self.rows:
            cells = []
            for col in COLUMNS:
                text = f"{row[col]:.2f}"
                flag = row["flags"].get(col)
                if flag == "best":
                    text = f"**{text}**"
                elif flag == "second":
                    text = f"<u>{text}</u>"
                cells.append(text)
            lines.append(f"| {row['model']} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "table.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        (directory / "table.md").write_text(self.to_markdown())
        with open(directory / "table.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "group", *COLUMNS, "best", "second"])
            for row in self.rows:
                flags = row["flags"]
                w.writerow([
                    row["model"], row["group"], *(f"{row[c]:.2f}" for c in COLUMNS),
                    ";".join(c for c in COLUMNS if flags.get(c) == "best"),
                    ";".join(c for c in COLUMNS if flags.get(c) == "second"),
                ])
        with open(directory / "per_class_f1.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", *(f"level_{c}" for c in LEVEL_CODES)])
            for model, series in self.per_class_f1.items():
                w.writerow([model, *(f"{v:.2f}" for v in series)])


def report(reports: Mapping[str, EvalReport], groups: Mapping[str, str] | None = None) -> ComparisonTable:
    """Percentages with two decimals; ``best``/``second`` flags per column within each group."""
    if not reports:
        raise ValueError("report needs at least one model")
    groups = groups or {}
    rows = []
    for model, rep in reports.items():
        rows.append(
            {
                "model": model,
                "group": groups.get(model, ""),
                "ACC": _pct(rep.accuracy),
                "P": _pct(rep.macro.precision),
                "R": _pct(rep.macro.recall),
                "F1": _pct(rep.macro.f1),
                "flags": {},
            }
        )
    for group in dict.fromkeys(r["group"] for r in rows):
        members = [r for r in rows if r["group"] == group]
        for col in COLUMNS:
            distinct = sorted({r[col] for r in members}, reverse=True)
            for r in members:
                if r[col] == distinct[0]:
                    r["flags"][col] = "best"
                elif len(distinct) > 1 and r[col] == distinct[1]:
                    r["flags"][col] = "second"
    per_class = {model: [_pct(rep.per_class[c].f1) for c in LEVEL_CODES] for model, rep in reports.items()}
    return ComparisonTable(rows, per_class)

"""Level distributions, progress trajectories, timing speed-ups and the report bundle."""

from __future__ import annotations

import csv
import io
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Dialogue, Role, display_type, type_distribution
from .errors import MissingCondition, ParseError
from .taxonomy import LEVEL_CODES, LEVELS, DefenseCategory, ScoreMapping, aggregate_categories

GROUPINGS = (None, "emotion", "problem")
ALL = "all"


def _group_of(d: Dialogue, group_by: str | None) -> str:
    if group_by is None:
        return ALL
    if group_by == "emotion":
        return d.emotion
    if group_by == "problem":
        return d.problem
    raise ValueError(f"unknown grouping {group_by!r}")


def labelled_seeker_turns(d: Dialogue):
    return [t for t in d.turns if t.role is Role.SEEKER and t.level is not None]


@dataclass(frozen=True)
class DistributionTable:
    group_by: str | None
    counts: dict[str, tuple[int, ...]]  # group -> counts for levels 0..8

    def proportions(self, group: str) -> list[float]:
        row = self.counts[group]
        total = sum(row)
        return [c / total if total else 0.0 for c in row]

    def categories(self, group: str) -> dict[DefenseCategory, int]:
        return aggregate_categories(dict(zip(LEVEL_CODES, self.counts[group])))

    def total(self, group: str) -> int:
        return sum(self.counts[group])


def level_distribution(dialogues: Sequence[Dialogue], group_by: str | None = None) -> DistributionTable:
    counts: dict[str, list[int]] = defaultdict(lambda: [0] * len(LEVEL_CODES))
    for d in dialogues:
        for t in labelled_seeker_turns(d):
            counts[_group_of(d, group_by)][t.level] += 1
    return DistributionTable(group_by, {g: tuple(v) for g, v in sorted(counts.items())})


# -- trajectories ---------------------------------------------------------------------


@dataclass(frozen=True)
class BinPoint:
    bin: int
    progress: int  # percent of dialogue progress at the bin's upper edge
    mean: float | None
    dispersion: float | None
    support: int


@dataclass(frozen=True)
class TrajectoryCurve:
    group: str
    band: str
    points: tuple[BinPoint, ...]

    @property
    def support(self) -> int:
        return sum(p.support for p in self.points)


def progress_bin(position: int, length: int, bins: int = 10) -> int:
    """Bin (1-based) of the ``position``-th of ``length`` seeker turns: ceil(bins * p / P)."""
    if not 1 <= position <= length:
        raise ValueError(f"position {position} outside 1..{length}")
    return -(-bins * position // length)


def _dispersion(values: Sequence[float], band: str) -> float:
    if band == "sd":
        return statistics.pstdev(values)
    if band == "ci95":
        if len(values) < 2:
            return 0.0
        return 1.96 * statistics.stdev(values) / math.sqrt(len(values))
    raise ValueError(f"unknown band {band!r}; use 'sd' or 'ci95'")


def trajectory(
    dialogues: Sequence[Dialogue],
    mapping: ScoreMapping | None = None,
    bins: int = 10,
    group_by: str | None = None,
    band: str = "sd",
) -> dict[str, TrajectoryCurve]:
    """Mean immaturity score per progress bin. Empty bins come back with ``mean=None``."""
    mapping = mapping or ScoreMapping.default()
    scores: dict[str, list[list[float]]] = defaultdict(lambda: [[] for _ in range(bins)])
    for d in dialogues:
        seeker = [t for t in d.turns if t.role is Role.SEEKER]
        group = _group_of(d, group_by)
        per_bin = scores[group]
        for pos, t in enumerate(seeker, start=1):
            if t.level is None:
                continue
            s = mapping.scores[t.level]
            if s is None:
                continue
            per_bin[progress_bin(pos, len(seeker), bins) - 1].append(s)
    curves = {}
    for group, per_bin in sorted(scores.items()):
        points = []
        for b, values in enumerate(per_bin, start=1):
            if values:
                points.append(BinPoint(b, round(100 * b / bins), statistics.fmean(values), _dispersion(values, band), len(values)))
            else:
                points.append(BinPoint(b, round(100 * b / bins), None, None, 0))
        curves[group] = TrajectoryCurve(group, band, tuple(points))
    return curves


# -- timing study -----------------------------------------------------------------------

BASELINE, COPILOT = "baseline", "copilot"
_CONDITION_ALIASES = {
    "baseline": BASELINE, "-": BASELINE, "without": BASELINE, "none": BASELINE, "manual": BASELINE,
    "copilot": COPILOT, "co-pilot": COPILOT, "dmrs co-pilot": COPILOT, "with": COPILOT, "tool": COPILOT,
}
POOLED = "pooled"


@dataclass(frozen=True)
class TimingRow:
    group: str
    condition: str
    seconds: float
    tasks: int = 1

    def __post_init__(self) -> None:
        if self.seconds <= 0:
            raise ValueError(f"task time must be positive, got {self.seconds}")
        if self.tasks < 1:
            raise ValueError(f"task weight must be >= 1, got {self.tasks}")


def normalize_condition(value: str) -> str:
    try:
        return _CONDITION_ALIASES[value.strip().lower()]
    except KeyError:
        raise ParseError(f"unknown condition {value!r}") from None


def load_timing(path: str | Path) -> list[TimingRow]:
    """Read a timing log with columns ``group, condition, seconds`` and optional ``tasks``.

    ``tasks`` lets one row stand for the mean of several tasks.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        sample = fh.read(2048)
        fh.seek(0)
        dialect = csv.Sniffer().sniff(sample, delimiters=",\t;")
        for i, rec in enumerate(csv.DictReader(fh, dialect=dialect)):
            try:
                rows.append(
                    TimingRow(
                        rec["group"].strip(),
                        normalize_condition(rec["condition"]),
                        float(rec["seconds"]),
                        int(rec.get("tasks") or 1),
                    )
                )
            except (KeyError, ValueError, AttributeError) as exc:
                raise ParseError(f"bad timing row: {exc}", record=i) from exc
    return rows


def speedup(baseline: float, copilot: float) -> float:
    """Relative time saved, in percent."""
    return 100.0 * (baseline - copilot) / baseline


@dataclass(frozen=True)
class GroupTiming:
    group: str
    baseline: float
    copilot: float
    tasks: tuple[int, int]

    @property
    def speedup(self) -> float:
        return speedup(self.baseline, self.copilot)


def _weighted_mean(rows: Iterable[TimingRow]) -> tuple[float, int]:
    rows = list(rows)
    n = sum(r.tasks for r in rows)
    return sum(r.seconds * r.tasks for r in rows) / n, n


def _aggregate(group: str, rows: Sequence[TimingRow]) -> GroupTiming:
    base = [r for r in rows if r.condition == BASELINE]
    tool = [r for r in rows if r.condition == COPILOT]
    if not base or not tool:
        missing = BASELINE if not base else COPILOT
        raise MissingCondition(f"group {group!r} has no {missing} rows")
    (b, nb), (c, nc) = _weighted_mean(base), _weighted_mean(tool)
    return GroupTiming(group, b, c, (nb, nc))


def timing_speedup(rows: Sequence[TimingRow]) -> dict[str, GroupTiming]:
    """Per-group and pooled speed-ups.

    The pooled entry is the task-weighted mean over all non-pooled rows, unless the
    log itself carries rows for a group named ``pooled``; those are used as given.
    """
    by_group: dict[str, list[TimingRow]] = defaultdict(list)
    for r in rows:
        by_group[r.group].append(r)
    out = {}
    for group in sorted(g for g in by_group if g.lower() != POOLED):
        out[group] = _aggregate(group, by_group[group])
    explicit = [r for r in rows if r.group.lower() == POOLED]
    if explicit:
        out[POOLED] = _aggregate(POOLED, explicit)
    else:
        out[POOLED] = _aggregate(POOLED, [r for r in rows if r.group.lower() != POOLED])
    return out


# -- report bundle -----------------------------------------------------------------------


def _csv(rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def _fmt(x: float | None, digits: int = 4) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def distribution_csv(table: DistributionTable) -> str:
    header = ["group", "total", *(f"n_{c}" for c in LEVEL_CODES), *(f"p_{c}" for c in LEVEL_CODES),
              *(f"cat_{cat.value}" for cat in DefenseCategory)]
    rows = [header]
    for g in table.counts:
        cats = table.categories(g)
        rows.append([g, table.total(g), *table.counts[g], *(_fmt(p, 6) for p in table.proportions(g)),
                     *(cats[cat] for cat in DefenseCategory)])
    return _csv(rows)


def trajectory_csv(curves: Mapping[str, TrajectoryCurve]) -> str:
    rows: list[list[object]] = [["group", "bin", "progress", "mean", "dispersion", "band", "support"]]
    for g, curve in curves.items():
        for p in curve.points:
            rows.append([g, p.bin, p.progress, _fmt(p.mean), _fmt(p.dispersion), curve.band, p.support])
    return _csv(rows)


def timing_csv(result: Mapping[str, GroupTiming]) -> str:
    rows: list[list[object]] = [["group", "baseline_s", "copilot_s", "baseline_tasks", "copilot_tasks", "speedup_pct"]]
    for g, t in result.items():
        rows.append([g, f"{t.baseline:.2f}", f"{t.copilot:.2f}", t.tasks[0], t.tasks[1], f"{t.speedup:.1f}"])
    return _csv(rows)


def _pct(count: int, total: int) -> str:
    return f"{100.0 * count / total:.1f}%" if total else "0.0%"


def summary_markdown(
    dialogues: Sequence[Dialogue],
    tables: Mapping[str, DistributionTable],
    timing: Mapping[str, GroupTiming] | None = None,
) -> str:
    lines = ["# Corpus analysis summary", ""]
    if dialogues:
        types = type_distribution(dialogues)
        for title, key in (("Seeker problems", "problem"), ("Seeker emotions", "emotion")):
            counts = types[key]
            total = sum(counts.values())
            lines += [f"## {title}", "", "| Category | Num | Proportion |", "|---|---:|---:|"]
            for name, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
                lines.append(f"| {display_type(name)} | {c:,} | {_pct(c, total)} |")
            lines += [f"| Overall | {total:,} | {_pct(total, total)} |", ""]
    overall = tables.get(ALL)
    if overall is not None and ALL in overall.counts:
        total = overall.total(ALL)
        lines += ["## Seeker defense levels", "", "| Level | Num | Proportion |", "|---|---:|---:|"]
        for level, c in zip(LEVELS, overall.counts[ALL]):
            lines.append(f"| {level.code} {level.name} | {c:,} | {_pct(c, total)} |")
        lines += [f"| Overall | {total:,} | {_pct(total, total)} |", ""]
        lines += ["## Seeker defense categories", "", "| Category | Num | Proportion |", "|---|---:|---:|"]
        for cat, c in overall.categories(ALL).items():
            codes = ", ".join(str(x) for x in cat.codes)
            lines.append(f"| {cat.label} ({codes}) | {c:,} | {_pct(c, total)} |")
        lines += [f"| Overall | {total:,} | {_pct(total, total)} |", ""]
    if timing:
        lines += ["## Annotation time per task", "", "| Group | Baseline (s) | Co-pilot (s) | Speed-up |",
                  "|---|---:|---:|---:|"]
        for g, t in timing.items():
            lines.append(f"| {g} | {t.baseline:.2f} | {t.copilot:.2f} | {t.speedup:+.1f}% |")
        lines.append("")
    return "\n".join(lines)


@dataclass
class ReportBundle:
    files: dict[str, str] = field(default_factory=dict)

    def write(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
            written = []
            for name, text in sorted(self.files.items()):
                path = directory / name
                path.write_text(text, encoding="utf-8")
                written.append(path)
        except OSError as exc:
            raise OSError(f"cannot write report to {directory}: {exc}") from exc
        return written


def emit_report(
    dialogues: Sequence[Dialogue] = (),
    tables: Mapping[str, DistributionTable] | None = None,
    curves: Mapping[str, Mapping[str, TrajectoryCurve]] | None = None,
    timing: Mapping[str, GroupTiming] | None = None,
) -> ReportBundle:
    """Assemble data files keyed by file name plus ``summary.md``; nothing touches disk here."""
    tables = tables or {}
    curves = curves or {}
    bundle = ReportBundle()
    for name, table in tables.items():
        bundle.files[f"distribution_{name}.csv"] = distribution_csv(table)
    for name, cs in curves.items():
        bundle.files[f"trajectory_{name}.csv"] = trajectory_csv(cs)
    if timing:
        bundle.files["timing.csv"] = timing_csv(timing)
    bundle.files["summary.md"] = summary_markdown(dialogues, tables, timing)
    return bundle


def full_report(dialogues: Sequence[Dialogue], mapping: ScoreMapping | None = None, band: str = "sd") -> ReportBundle:
    tables = {
        (g or ALL): level_distribution(dialogues, g) for g in GROUPINGS
    }
    curves = {(g or ALL): trajectory(dialogues, mapping, group_by=g, band=band) for g in GROUPINGS}
    return emit_report(dialogues, tables, curves)

"""Four-stage defense analysis: stressor -> item screening -> evidence validation -> synthesis.

Each stage is one or more gateway calls. Failures never abort an instance; they
degrade along a fixed ladder (schema re-ask inside the gateway, then a per-item
degraded record, then level-8/level-0 fallback conclusions).
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

from .corpus import SeekerInstance
from .errors import ConfigError
from .llm.client import Gateway, GatewayError
from .prompts import label_key, load_templates, render
from .taxonomy import DmrsItem, ItemRegistry, level_from_code

log = logging.getLogger(__name__)

FALLBACK_STRESSOR = "unspecified stressor"
SCREENING_UNAVAILABLE = "screening unavailable"


class Confidence(str, Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"


class Rank(str, Enum):
    PRIMARY = "Primary"
    SECONDARY = "Secondary"


@dataclass(frozen=True)
class AnalysisInput:
    situation: str
    prior_turns: tuple[str, ...]
    target: str

    def __post_init__(self) -> None:
        if not self.target.strip():
            raise ValueError("target utterance must be non-empty")

    @classmethod
    def from_instance(cls, instance: SeekerInstance) -> AnalysisInput:
        prior = tuple(f"[{t.role.value.capitalize()}] {t.text}" for t in instance.context[:-1])
        return cls(instance.situation, prior, instance.target.text)

    @property
    def background(self) -> str:
        lines = []
        if self.situation:
            lines.append(f"Situation: {self.situation}")
        lines.extend(self.prior_turns or ("(no prior turns)",))
        return "\n".join(lines)

    @property
    def digest(self) -> str:
        blob = json.dumps([self.situation, list(self.prior_turns), self.target], ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class StressorHypothesis:
    text: str
    degraded: bool = False


@dataclass(frozen=True)
class ScreeningJudgment:
    item_id: int
    relevant: bool
    rationale: str
    degraded: bool = False


@dataclass(frozen=True)
class ValidatedItem:
    item_id: int
    confidence: Confidence
    evidence: str


@dataclass(frozen=True)
class DroppedItem:
    item_id: int
    reason: str


@dataclass(frozen=True)
class Conclusion:
    rank: Rank
    item_id: int | None
    level: int
    rationale: str
    relational_cues: tuple[str, ...] = ()
    fallback: bool = False
    weak: bool = False

    @property
    def level_name(self) -> str:
        return level_from_code(self.level).name

    def to_dict(self) -> dict:
        return {
            "rank": self.rank.value,
            "item_id": self.item_id,
            "level": self.level,
            "level_name": self.level_name,
            "rationale": self.rationale,
            "relational_cues": list(self.relational_cues),
            "fallback": self.fallback,
            "weak": self.weak,
        }


def fallback_conclusions(reason: str) -> tuple[Conclusion, Conclusion]:
    return (
        Conclusion(Rank.PRIMARY, None, 8, f"needs more information: {reason}", fallback=True),
        Conclusion(Rank.SECONDARY, None, 0, f"fallback secondary: {reason}", fallback=True, weak=True),
    )


@dataclass
class StageTrace:
    model: str
    calls: int = 0
    attempts: int = 0
    cached_calls: int = 0
    degraded: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, attempts: int, cached: bool, degraded: bool = False) -> None:
        with self._lock:
            self.calls += 1
            self.attempts += attempts
            self.cached_calls += int(cached)
            self.degraded += int(degraded)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "calls": self.calls,
            "attempts": self.attempts,
            "cached_calls": self.cached_calls,
            "degraded": self.degraded,
        }


@dataclass(frozen=True)
class AnalysisResult:
    dialogue_id: str
    utterance_index: int
    input_digest: str
    stressor: StressorHypothesis
    screening: tuple[ScreeningJudgment, ...]
    validated: tuple[ValidatedItem, ...]
    conclusions: tuple[Conclusion, Conclusion]
    dropped: tuple[DroppedItem, ...] = ()
    provenance: dict[str, dict] = field(default_factory=dict)

    @property
    def key(self) -> tuple[str, int]:
        return (self.dialogue_id, self.utterance_index)

    @property
    def relevant_ids(self) -> list[int]:
        return [j.item_id for j in self.screening if j.relevant]

    @property
    def fallback(self) -> bool:
        return self.conclusions[0].fallback

    @property
    def degraded(self) -> bool:
        return (
            self.stressor.degraded
            or any(j.degraded for j in self.screening)
            or bool(self.dropped)
            or any(p.get("degraded") for p in self.provenance.values())
        )

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "utterance_index": self.utterance_index,
            "input_digest": self.input_digest,
            "stressor": {"text": self.stressor.text, "degraded": self.stressor.degraded},
            "screening": [
                {"item_id": j.item_id, "relevant": j.relevant, "rationale": j.rationale, "degraded": j.degraded}
                for j in self.screening
            ],
            "validated": [
                {"item_id": v.item_id, "confidence": v.confidence.value, "evidence": v.evidence}
                for v in self.validated
            ],
            "dropped": [{"item_id": d.item_id, "reason": d.reason} for d in self.dropped],
            "conclusions": [c.to_dict() for c in self.conclusions],
            "provenance": self.provenance,
            "degraded": self.degraded,
            "fallback": self.fallback,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> AnalysisResult:
        c1, c2 = (
            Conclusion(
                Rank(c["rank"]),
                c["item_id"],
                c["level"],
                c["rationale"],
                tuple(c.get("relational_cues", ())),
                c.get("fallback", False),
                c.get("weak", False),
            )
            for c in d["conclusions"]
        )
        return cls(
            dialogue_id=d["dialogue_id"],
            utterance_index=d["utterance_index"],
            input_digest=d["input_digest"],
            stressor=StressorHypothesis(d["stressor"]["text"], d["stressor"].get("degraded", False)),
            screening=tuple(
                ScreeningJudgment(j["item_id"], j["relevant"], j["rationale"], j.get("degraded", False))
                for j in d["screening"]
            ),
            validated=tuple(ValidatedItem(v["item_id"], Confidence(v["confidence"]), v["evidence"]) for v in d["validated"]),
            conclusions=(c1, c2),
            dropped=tuple(DroppedItem(x["item_id"], x["reason"]) for x in d.get("dropped", ())),
            provenance=d.get("provenance", {}),
        )


def write_results(results: Iterable[AnalysisResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(r.to_json() + "\n")


def read_results(path: str | Path) -> list[AnalysisResult]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [AnalysisResult.from_dict(json.loads(line)) for line in lines if line.strip()]


def subset_chain_violations(result: AnalysisResult, registry: ItemRegistry) -> list[str]:
    """Audit-trail check: conclusion items within validated within relevant within the registry."""
    problems = []
    relevant = set(result.relevant_ids)
    validated = {v.item_id for v in result.validated}
    if not relevant <= set(registry.ids):
        problems.append(f"relevant items outside registry: {sorted(relevant - set(registry.ids))}")
    if not validated <= relevant:
        problems.append(f"validated items not screened relevant: {sorted(validated - relevant)}")
    if not result.fallback:
        for c in result.conclusions:
            if c.item_id is not None and c.item_id not in validated:
                problems.append(f"{c.rank.value} conclusion cites unvalidated item {c.item_id}")
            if 1 <= c.level <= 7 and (c.item_id is None or registry[c.item_id].level != c.level):
                problems.append(f"{c.rank.value} conclusion level {c.level} not backed by its item")
    return problems


def describe_item(item: DmrsItem) -> str:
    level = level_from_code(item.level)
    return f"Item {item.id} [{item.mechanism}; level {item.level}, {level.name}]: {item.description}"


class CoPilot:
    """Runs the cascade for seeker instances against one item registry."""

    def __init__(
        self,
        gateway: Gateway,
        registry: ItemRegistry,
        templates: dict[str, str] | None = None,
        fanout: int | None = None,
        batch_size: int | None = None,
    ) -> None:
        self.gateway = gateway
        self.registry = registry
        self.templates = templates or load_templates()
        self.fanout = fanout or gateway.config.fanout
        self.batch_size = batch_size or gateway.config.screening_batch_size
        if self.fanout < 1 or self.batch_size < 1:
            raise ConfigError("fanout and batch size must be >= 1")

    def _trace(self, stage: str) -> StageTrace:
        return StageTrace(self.gateway.config.route(stage))

    def _map(self, fn, items: Sequence) -> list:
        if self.fanout == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=min(self.fanout, len(items))) as pool:
            return list(pool.map(fn, items))

    # -- stage 1 --------------------------------------------------------------------

    def identify_stressor(self, inp: AnalysisInput, trace: StageTrace | None = None) -> StressorHypothesis:
        trace = trace or self._trace("stressor")
        prompt = render(self.templates["stressor"], {"background": inp.background, "target": inp.target})
        request = self.gateway.request("stressor", prompt, "stressor", target=inp.target)
        try:
            result = self.gateway.complete(request)
        except GatewayError as exc:
            log.warning("stressor stage degraded: %s", exc)
            trace.record(exc.attempts, False, degraded=True)
            return StressorHypothesis(FALLBACK_STRESSOR, degraded=True)
        trace.record(result.provenance.attempts, result.provenance.cached)
        return StressorHypothesis(result.parsed["stressor"].strip())

    # -- stage 2 --------------------------------------------------------------------

    def _screen_one(self, inp: AnalysisInput, s: StressorHypothesis, item: DmrsItem, trace: StageTrace) -> ScreeningJudgment:
        prompt = render(
            self.templates["screening"],
            {"background": inp.background, "target": inp.target, "stressor": s.text, "item": describe_item(item)},
        )
        request = self.gateway.request("screening", prompt, "screening", item_id=item.id, target=inp.target)
        try:
            result = self.gateway.complete(request)
        except GatewayError as exc:
            log.warning("screening of item %d degraded: %s", item.id, exc)
            trace.record(exc.attempts, False, degraded=True)
            return ScreeningJudgment(item.id, False, SCREENING_UNAVAILABLE, degraded=True)
        trace.record(result.provenance.attempts, result.provenance.cached)
        return ScreeningJudgment(item.id, bool(result.parsed["relevant"]), result.parsed["rationale"].strip())

    def _screen_batch(
        self, inp: AnalysisInput, s: StressorHypothesis, batch: Sequence[DmrsItem], trace: StageTrace
    ) -> list[ScreeningJudgment]:
        wanted = [it.id for it in batch]

        def covers_batch(payload: Any) -> str | None:
            got = [j["item_id"] for j in payload["judgments"]]
            if sorted(got) != sorted(wanted):
                return f"judgments must cover item ids {wanted} exactly once each, got {got}"
            return None

        prompt = render(
            self.templates["screening_batch"],
            {
                "background": inp.background,
                "target": inp.target,
                "stressor": s.text,
                "items": "\n".join(describe_item(it) for it in batch),
            },
        )
        request = self.gateway.request("screening", prompt, "screening_batch", item_ids=wanted, target=inp.target)
        try:
            result = self.gateway.complete(request, validator=covers_batch)
        except GatewayError as exc:
            log.warning("screening batch %s degraded: %s", wanted, exc)
            trace.record(exc.attempts, False, degraded=True)
            return [ScreeningJudgment(i, False, SCREENING_UNAVAILABLE, degraded=True) for i in wanted]
        trace.record(result.provenance.attempts, result.provenance.cached)
        by_id = {j["item_id"]: j for j in result.parsed["judgments"]}
        return [ScreeningJudgment(i, bool(by_id[i]["relevant"]), by_id[i]["rationale"].strip()) for i in wanted]

    def screen_items(
        self, inp: AnalysisInput, s: StressorHypothesis, trace: StageTrace | None = None
    ) -> list[ScreeningJudgment]:
        trace = trace or self._trace("screening")
        items = list(self.registry)
        if self.batch_size == 1:
            return self._map(lambda it: self._screen_one(inp, s, it, trace), items)
        batches = [items[i : i + self.batch_size] for i in range(0, len(items), self.batch_size)]
        return [j for part in self._map(lambda b: self._screen_batch(inp, s, b, trace), batches) for j in part]

    # -- stage 3 --------------------------------------------------------------------

    def validate_item(
        self, item: DmrsItem, inp: AnalysisInput, s: StressorHypothesis, trace: StageTrace | None = None
    ) -> ValidatedItem | DroppedItem:
        trace = trace or self._trace("validation")
        prompt = render(
            self.templates["validation"],
            {"background": inp.background, "target": inp.target, "stressor": s.text, "item": describe_item(item)},
        )
        request = self.gateway.request("validation", prompt, "validation", item_id=item.id, target=inp.target)
        try:
            result = self.gateway.complete(request)
        except GatewayError as exc:
            log.warning("validation of item %d dropped: %s", item.id, exc)
            trace.record(exc.attempts, False, degraded=True)
            return DroppedItem(item.id, f"{type(exc).__name__}: {exc}")
        trace.record(result.provenance.attempts, result.provenance.cached)
        return ValidatedItem(item.id, Confidence(result.parsed["confidence"]), result.parsed["evidence"].strip())

    def validate_items(
        self, relevant: Sequence[int], inp: AnalysisInput, s: StressorHypothesis, trace: StageTrace | None = None
    ) -> tuple[list[ValidatedItem], list[DroppedItem]]:
        trace = trace or self._trace("validation")
        outcomes = self._map(lambda i: self.validate_item(self.registry[i], inp, s, trace), list(relevant))
        validated = [o for o in outcomes if isinstance(o, ValidatedItem)]
        dropped = [o for o in outcomes if isinstance(o, DroppedItem)]
        return validated, dropped

    # -- stage 4 --------------------------------------------------------------------

    def _synthesis_check(self, validated: Sequence[ValidatedItem]):
        allowed = {v.item_id for v in validated}

        def check(payload: Any) -> str | None:
            pair = [payload["primary"], payload["secondary"]]
            for name, c in zip(("primary", "secondary"), pair):
                item_id, level = c["item_id"], c["level"]
                if item_id is not None and item_id not in allowed:
                    return f"{name} cites item {item_id}, which is not among the validated items {sorted(allowed)}"
                if 1 <= level <= 7:
                    if item_id is None:
                        return f"{name} level {level} must cite a validated item"
                    if self.registry[item_id].level != level:
                        return (
                            f"{name} level {level} disagrees with item {item_id}, "
                            f"which belongs to level {self.registry[item_id].level}"
                        )
            if (pair[0]["item_id"], pair[0]["level"]) == (pair[1]["item_id"], pair[1]["level"]):
                return "secondary conclusion repeats the primary conclusion"
            return None

        return check

    def synthesize(
        self,
        validated: Sequence[ValidatedItem],
        inp: AnalysisInput,
        s: StressorHypothesis,
        trace: StageTrace | None = None,
    ) -> tuple[Conclusion, Conclusion]:
        trace = trace or self._trace("synthesis")
        if not validated:
            return fallback_conclusions("no validated evidence")
        lines = []
        for v in validated:
            item = self.registry[v.item_id]
            lines.append(
                f"- item {item.id} | level {item.level} ({level_from_code(item.level).name}) | "
                f"{item.mechanism} | confidence {v.confidence.value} | evidence: {v.evidence}"
            )
        prompt = render(
            self.templates["synthesis"],
            {
                "background": inp.background,
                "target": inp.target,
                "stressor": s.text,
                "validated": "\n".join(lines),
                "label_key": label_key(),
            },
        )
        candidates = [
            {"item_id": v.item_id, "level": self.registry[v.item_id].level, "confidence": v.confidence.value}
            for v in validated
        ]
        request = self.gateway.request("synthesis", prompt, "synthesis", candidates=candidates, target=inp.target)
        try:
            result = self.gateway.complete(request, validator=self._synthesis_check(validated))
        except GatewayError as exc:
            log.warning("synthesis degraded: %s", exc)
            trace.record(exc.attempts, False, degraded=True)
            return fallback_conclusions(f"synthesis failed ({type(exc).__name__})")
        trace.record(result.provenance.attempts, result.provenance.cached)

        confidence = {v.item_id: v.confidence for v in validated}
        out = []
        for rank, c in ((Rank.PRIMARY, result.parsed["primary"]), (Rank.SECONDARY, result.parsed["secondary"])):
            weak = rank is Rank.SECONDARY and (c["item_id"] is None or confidence[c["item_id"]] is Confidence.LOW)
            out.append(
                Conclusion(rank, c["item_id"], c["level"], c["rationale"].strip(),
                           tuple(str(x) for x in c["relational_cues"]), weak=weak)
            )
        return out[0], out[1]

    # -- composition ----------------------------------------------------------------

    def run(self, instance: SeekerInstance) -> AnalysisResult:
        inp = AnalysisInput.from_instance(instance)
        traces = {stage: self._trace(stage) for stage in ("stressor", "screening", "validation", "synthesis")}
        s = self.identify_stressor(inp, traces["stressor"])
        judgments = self.screen_items(inp, s, traces["screening"])
        relevant = [j.item_id for j in judgments if j.relevant]
        validated, dropped = self.validate_items(relevant, inp, s, traces["validation"])
        conclusions = self.synthesize(validated, inp, s, traces["synthesis"])
        return AnalysisResult(
            dialogue_id=instance.dialogue_id,
            utterance_index=instance.utterance_index,
            input_digest=inp.digest,
            stressor=s,
            screening=tuple(judgments),
            validated=tuple(validated),
            conclusions=conclusions,
            dropped=tuple(dropped),
            provenance={stage: t.to_dict() for stage, t in traces.items()},
        )

    def run_batch(self, instances: Sequence[SeekerInstance], workers: int = 1) -> list[AnalysisResult]:
        """Results come back in input order regardless of ``workers``."""
        if workers <= 1:
            return [self.run(inst) for inst in instances]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(self.run, instances))


def run_pipeline(instance: SeekerInstance, registry: ItemRegistry, gateway: Gateway, **kwargs: Any) -> AnalysisResult:
    return CoPilot(gateway, registry, **kwargs).run(instance)

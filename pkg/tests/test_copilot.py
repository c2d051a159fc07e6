from __future__ import annotations

import os

import pytest

from conftest import FIXTURES, GOLDEN, mock_gateway
from dmrs_workbench.copilot import (
    FALLBACK_STRESSOR,
    AnalysisInput,
    AnalysisResult,
    Confidence,
    CoPilot,
    read_results,
    run_pipeline,
    subset_chain_violations,
    write_results,
)
from dmrs_workbench.corpus import build_instances
from dmrs_workbench.errors import TemplateError
from dmrs_workbench.llm import MockProvider
from dmrs_workbench.prompts import load_templates, render

GOLDEN_RUN = GOLDEN / "copilot_50.jsonl"


def seeded(**kw):
    return MockProvider.from_script(FIXTURES / "mock_seeded.yaml") if not kw else MockProvider(**kw)


def analyse(instances, registry, fanout=1, workers=1, provider=None, **kw):
    gw = mock_gateway(provider or seeded(), fanout=fanout)
    return CoPilot(gw, registry, **kw).run_batch(instances, workers=workers)


def test_golden_run_is_byte_stable_across_fanout(tmp_path, instances, registry):
    fifty = instances[:50]
    paths = []
    for fanout, workers in ((1, 1), (8, 1), (8, 4)):
        path = tmp_path / f"run_{fanout}_{workers}.jsonl"
        write_results(analyse(fifty, registry, fanout=fanout, workers=workers), path)
        paths.append(path)
    blobs = {p.read_bytes() for p in paths}
    assert len(blobs) == 1
    if os.environ.get("REGEN_GOLDEN"):
        GOLDEN_RUN.write_bytes(paths[0].read_bytes())
    assert paths[0].read_bytes() == GOLDEN_RUN.read_bytes()


def test_golden_run_invariants(instances, registry):
    results = read_results(GOLDEN_RUN)
    assert len(results) == 50
    assert [r.key for r in results] == [i.key for i in instances[:50]]
    for r in results:
        assert subset_chain_violations(r, registry) == []
        assert len(r.conclusions) == 2
        assert {c.rank.value for c in r.conclusions} == {"Primary", "Secondary"}
        assert [j.item_id for j in r.screening] == registry.ids


def test_prompts_never_see_future_turns(esconv_dialogues, registry):
    for d in esconv_dialogues[:3]:
        for inst in build_instances(d):
            mock = seeded()
            run_pipeline(inst, registry, mock_gateway(mock))
            seen = {t.text for t in inst.context}
            future = [t.text for t in d.turns if t.index > inst.utterance_index and t.text not in seen]
            assert future or inst.utterance_index >= len(d.turns) - 2
            for prompt in mock.prompts:
                assert inst.target.text in prompt
                for text in future:
                    assert text not in prompt


def test_stage_one_stressor(instances, registry):
    mock = MockProvider(rules=[{"match": {"schema": "stressor"}, "replies": [{"stressor": "  job loss  "}]}])
    cp = CoPilot(mock_gateway(mock), registry)
    s = cp.identify_stressor(AnalysisInput.from_instance(instances[3]))
    assert s.text == "job loss" and not s.degraded


def test_degraded_stressor_keeps_pipeline_running(instances, registry):
    rules = [{"match": {"schema": "stressor"}, "replies": [{"error": "transport"}], "repeat_last": True}]
    result = analyse(instances[:1], registry, provider=MockProvider(rules=rules, seed=5))[0]
    assert result.stressor.text == FALLBACK_STRESSOR and result.stressor.degraded
    assert result.degraded
    assert result.provenance["stressor"]["attempts"] == 4
    assert len(result.screening) == len(registry)


def test_no_relevant_items_gives_fallback_without_synthesis(instances, registry):
    rules = [{"match": {"schema": "screening"}, "replies": [{"relevant": False, "rationale": "no"}], "repeat_last": True}]
    mock = MockProvider(rules=rules, seed=5)
    result = analyse(instances[:1], registry, provider=mock)[0]
    assert result.fallback and not result.degraded
    primary, secondary = result.conclusions
    assert primary.level == 8 and primary.item_id is None
    assert secondary.weak
    stages = {req.hints["stage"] for _, _, req in mock.calls}
    assert stages == {"stressor", "screening"}


def test_validation_failure_drops_item(instances, registry):
    rules = [
        {"match": {"schema": "screening", "item_id": [28, 140]}, "replies": [{"relevant": True, "rationale": "y"}],
         "repeat_last": True},
        {"match": {"schema": "screening"}, "replies": [{"relevant": False, "rationale": "n"}], "repeat_last": True},
        {"match": {"schema": "validation", "item_id": 28}, "replies": [{"confidence": "Sure"}], "repeat_last": True},
    ]
    result = analyse(instances[:1], registry, provider=MockProvider(rules=rules, seed=9))[0]
    assert result.relevant_ids == [28, 140]
    assert [v.item_id for v in result.validated] == [140]
    assert [d.item_id for d in result.dropped] == [28]
    assert subset_chain_violations(result, registry) == []


def test_synthesis_reask_on_unvalidated_item(instances, registry):
    bad = {"primary": {"item_id": 3, "level": 1, "rationale": "r", "relational_cues": []},
           "secondary": {"item_id": None, "level": 0, "rationale": "r", "relational_cues": []}}
    good = {"primary": {"item_id": 140, "level": 7, "rationale": "sets the worry aside", "relational_cues": ["agrees"]},
            "secondary": {"item_id": 121, "level": 7, "rationale": "reflects", "relational_cues": []}}
    rules = [
        {"match": {"schema": "screening", "item_id": [121, 140]}, "replies": [{"relevant": True, "rationale": "y"}],
         "repeat_last": True},
        {"match": {"schema": "screening"}, "replies": [{"relevant": False, "rationale": "n"}], "repeat_last": True},
        {"match": {"schema": "validation", "item_id": 121}, "replies": [{"confidence": "Low", "evidence": "e"}]},
        {"match": {"schema": "validation"}, "replies": [{"confidence": "High", "evidence": "e"}]},
        {"match": {"schema": "synthesis"}, "replies": [bad, good]},
    ]
    mock = MockProvider(rules=rules, seed=1)
    result = analyse(instances[:1], registry, provider=mock)[0]
    primary, secondary = result.conclusions
    assert (primary.item_id, primary.level) == (140, 7) and not primary.weak
    assert secondary.weak  # cites a Low-confidence item
    assert result.provenance["synthesis"]["attempts"] == 2
    synth_prompts = [req.prompt for _, _, req in mock.calls if req.schema_id == "synthesis"]
    assert "not among the validated items" in synth_prompts[1]
    assert {v.item_id: v.confidence for v in result.validated} == {121: Confidence.LOW, 140: Confidence.HIGH}


def test_batched_screening_matches_registry_order(instances, registry):
    results = analyse(instances[:5], registry, batch_size=5)
    for r in results:
        assert [j.item_id for j in r.screening] == registry.ids
        assert r.provenance["screening"]["calls"] == 3
        assert subset_chain_violations(r, registry) == []


def test_unreachable_provider_gives_degraded_fallbacks(instances, registry):
    rules = [{"match": {}, "replies": [{"error": "transport"}], "repeat_last": True}]
    results = analyse(instances[:3], registry, provider=MockProvider(rules=rules))
    for r in results:
        assert r.degraded and r.fallback
        assert r.conclusions[0].level == 8


def test_result_round_trip(tmp_path, instances, registry):
    results = analyse(instances[:4], registry)
    for r in results:
        assert AnalysisResult.from_dict(r.to_dict()) == r
    path = tmp_path / "r.jsonl"
    write_results(results, path)
    assert read_results(path) == results


def test_templates(tmp_path):
    t = load_templates()
    assert "{{target}}" in t["screening"]
    assert render("a {{x}} b", {"x": "{{y}}"}) == "a {{y}} b"  # values are not rescanned
    with pytest.raises(TemplateError):
        render("{{missing}}", {})
    (tmp_path / "stressor.txt").write_text("custom {{target}}")
    assert load_templates(tmp_path)["stressor"] == "custom {{target}}"

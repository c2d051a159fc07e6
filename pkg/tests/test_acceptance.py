"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

The annotated corpus and raw double annotations are not bundled. Criteria that
need them run against the real files when ``DMRS_GOLD_CORPUS`` (canonical JSONL)
or ``DMRS_DUAL_ANNOTATIONS`` (annotation JSONL, two annotators) are set, and
otherwise against the calibrated surrogate corpus and shipped fixtures; the
reported line says which.
"""

from __future__ import annotations

import contextlib
import csv
import json
import os
import random
import time
from fractions import Fraction
from pathlib import Path

import pytest

from conftest import ACCEPTANCE_LINES, FIXTURES, GOLDEN, SAMPLE_REGISTRY
from dmrs_workbench.annotation import cohen_kappa, load_annotations, split_by_annotator
from dmrs_workbench.cli import main
from dmrs_workbench.copilot import read_results, subset_chain_violations
from dmrs_workbench.corpus import (
    CORE_EMOTIONS,
    CORE_PROBLEMS,
    Dialogue,
    Role,
    Utterance,
    apportion,
    build_instances,
    load_corpus,
    write_corpus,
)
from dmrs_workbench.evaluator import compute_metrics, read_predictions
from oracles import brute_force_metrics

PUBLISHED_COUNTS = {"dialogues": 200, "total": 4709, "supporter": 2373, "seeker": 2336}
PUBLISHED_TURNS = {"total": 23.5, "supporter": 11.9, "seeker": 11.7}
PUBLISHED_LENGTHS = {"total": 19.8, "supporter": 20.9, "seeker": 18.8}
PUBLISHED_LEVEL_COUNTS = [371, 136, 77, 124, 105, 61, 216, 1211, 35]
PUBLISHED_LEVEL_PCT = [15.9, 5.8, 3.3, 5.3, 4.5, 2.6, 9.2, 51.8, 1.5]
PUBLISHED_CATEGORIES = {"NoDefense": 406, "Mature": 1211, "Neurotic": 277, "Immature": 442}
PUBLISHED_KAPPA = 0.639


@contextlib.contextmanager
def criterion(number: int, title: str, note: str = ""):
    try:
        yield
    except BaseException as exc:
        if isinstance(exc, pytest.skip.Exception):
            ACCEPTANCE_LINES.append(f"[{number}] SKIP  {title}: {exc}")
        else:
            ACCEPTANCE_LINES.append(f"[{number}] FAIL  {title}{f' ({note})' if note else ''}: {exc!r}"[:300])
        raise
    ACCEPTANCE_LINES.append(f"[{number}] PASS  {title}{f' ({note})' if note else ''}")


def gold_source(surrogate_file) -> tuple[Path, str]:
    real = os.environ.get("DMRS_GOLD_CORPUS")
    if real:
        return Path(real), "released gold corpus"
    return surrogate_file, "calibrated surrogate corpus; released corpus not bundled"


def run_json(capsys, argv):
    capsys.readouterr()
    assert main(argv) == 0
    return json.loads(capsys.readouterr().out)


def test_criterion_1_corpus_statistics(capsys, surrogate_file):
    path, label = gold_source(surrogate_file)
    with criterion(1, "corpus statistics", label):
        # Shipped tiny fixture against hand-computed values.
        tiny = run_json(capsys, ["stats", "--corpus", str(FIXTURES / "stats_tiny.jsonl"), "--json"])
        assert tiny["dialogues"] == 2
        assert tiny["utterances"] == {"total": 6, "supporter": 3, "seeker": 3}
        assert tiny["turns_per_dialogue"]["supporter"] == {"mean": 1.5, "sd": 0.5}
        assert tiny["utterance_length"]["total"]["mean"] == 3.0
        assert tiny["utterance_length"]["seeker"]["mean"] == pytest.approx(10 / 3, abs=1e-12)

        start = time.perf_counter()
        stats = run_json(capsys, ["stats", "--corpus", str(path), "--json"])
        elapsed = time.perf_counter() - start
        assert stats["dialogues"] == PUBLISHED_COUNTS["dialogues"]
        assert stats["utterances"] == {k: PUBLISHED_COUNTS[k] for k in ("total", "supporter", "seeker")}
        for role in PUBLISHED_TURNS:
            assert abs(stats["turns_per_dialogue"][role]["mean"] - PUBLISHED_TURNS[role]) <= 0.1
            assert abs(stats["utterance_length"][role]["mean"] - PUBLISHED_LENGTHS[role]) <= 0.1
        assert elapsed < 5.0


def test_criterion_2_distribution(tmp_path, surrogate_file):
    path, label = gold_source(surrogate_file)
    with criterion(2, "published level and category distribution", label):
        out = tmp_path / "dist"
        assert main(["analyze", "dist", "--corpus", str(path), "--out", str(out)]) == 0
        with open(out / "distribution_all.csv", newline="") as fh:
            (row,) = list(csv.DictReader(fh))
        counts = [int(row[f"n_{c}"]) for c in range(9)]
        assert counts == PUBLISHED_LEVEL_COUNTS
        for c in range(9):
            assert abs(100 * float(row[f"p_{c}"]) - PUBLISHED_LEVEL_PCT[c]) <= 0.1
        assert {k: int(row[f"cat_{k}"]) for k in PUBLISHED_CATEGORIES} == PUBLISHED_CATEGORIES
        assert "| 7 High-Adaptive Defenses | 1,211 | 51.8% |" in (out / "summary.md").read_text()


def test_criterion_3_agreement():
    dual = os.environ.get("DMRS_DUAL_ANNOTATIONS")
    note = "with released double annotations" if dual else (
        "property suite; corpus-level kappa not checked: raw double annotations are not released")
    with criterion(3, "Cohen's kappa", note):
        def keyed(seq):
            return {("d", i): v for i, v in enumerate(seq)}

        hand = cohen_kappa(keyed([7, 7, 0, 3]), keyed([7, 0, 0, 3]))
        assert abs(hand.kappa - 0.636) <= 1e-3
        rng = random.Random(3)
        for _ in range(200):
            n = rng.randrange(2, 200)
            a = [rng.randrange(9) for _ in range(n)]
            b = [x if rng.random() < 0.5 else rng.randrange(9) for x in a]
            if len(set(a) | set(b)) == 1:
                continue
            k = cohen_kappa(keyed(a), keyed(b)).kappa
            assert abs(k - cohen_kappa(keyed(b), keyed(a)).kappa) <= 1e-12
            order = rng.sample(range(n), n)
            assert abs(k - cohen_kappa(keyed([a[i] for i in order]), keyed([b[i] for i in order])).kappa) <= 1e-12
            if len(set(a)) > 1:
                assert cohen_kappa(keyed(a), keyed(a)).kappa == 1.0
        if dual:
            groups = split_by_annotator(load_annotations(dual))
            assert len(groups) == 2
            first, second = (groups[k] for k in sorted(groups))
            assert abs(cohen_kappa(first, second).kappa - PUBLISHED_KAPPA) <= 1e-3


def test_criterion_4_metric_oracle():
    with criterion(4, "metric oracle (100 seeds x 1,000 instances, hand fixture)"):
        for seed in range(100):
            rng = random.Random(seed)
            gold = [rng.randrange(9) for _ in range(1000)]
            pred = [None if rng.random() < 0.03 else rng.randrange(9) for _ in range(1000)]
            rep = compute_metrics({("d", i): p for i, p in enumerate(pred)}, {("d", i): g for i, g in enumerate(gold)})
            ref = brute_force_metrics(gold, pred)
            assert abs(rep.accuracy - ref["accuracy"]) <= 1e-12
            got = (rep.macro.precision, rep.macro.recall, rep.macro.f1)
            assert all(abs(x - y) <= 1e-12 for x, y in zip(got, ref["macro"]))
        hand = compute_metrics({("d", i): p for i, p in enumerate([7, 7, 7])},
                               {("d", i): g for i, g in enumerate([7, 7, 1])})
        assert abs(hand.accuracy - 2 / 3) <= 1e-12
        assert abs(hand.macro.f1 - 0.1) <= 1e-12
        assert abs(hand.macro_present.f1 - 0.4) <= 1e-12


def test_criterion_5_timing(tmp_path, capsys):
    with criterion(5, "timing speed-ups 40.6 / 0.0 / 22.4 percent"):
        capsys.readouterr()
        assert main(["analyze", "timing", "--log", str(FIXTURES / "timing_published.csv")]) == 0
        rows = {r["group"]: r for r in csv.DictReader(capsys.readouterr().out.splitlines())}
        expected = {"G1": 40.6, "G2": 0.0, "pooled": 22.4}
        for group, pct in expected.items():
            assert abs(float(rows[group]["speedup_pct"]) - pct) <= 0.1
        assert (rows["pooled"]["baseline_s"], rows["pooled"]["copilot_s"]) == ("27.62", "21.43")


def test_criterion_6_pipeline_golden(tmp_path, corpus_file, esconv_dialogues, registry):
    with criterion(6, "co-pilot golden run (50 instances, fan-out 1 and 8)"):
        start = time.perf_counter()
        outputs = []
        for fanout in ("1", "8"):
            out = tmp_path / f"run{fanout}"
            argv = ["copilot", "run", "--corpus", str(corpus_file), "--registry", str(SAMPLE_REGISTRY),
                    "--lenient-registry", "--mock", str(FIXTURES / "mock_seeded.yaml"), "--limit", "50",
                    "--fanout", fanout, "--out", str(out)]
            assert main(argv) == 0
            outputs.append(out / "analysis.jsonl")
        elapsed = time.perf_counter() - start
        golden = (GOLDEN / "copilot_50.jsonl").read_bytes()
        assert outputs[0].read_bytes() == outputs[1].read_bytes() == golden
        results = read_results(outputs[0])
        assert len(results) == 50
        by_key = {i.key: i for d in esconv_dialogues for i in build_instances(d)}
        turns = {d.id: d.turns for d in esconv_dialogues}
        for r in results:
            assert subset_chain_violations(r, registry) == []
            inst = by_key[r.key]
            later = {t.text for t in turns[r.dialogue_id][r.utterance_index + 1:]} - {t.text for t in inst.context}
            evidence = " ".join(v.evidence for v in r.validated) + r.stressor.text
            assert not any(text in evidence for text in later)
        # Causality at the prompt level is asserted per instance in test_copilot.
        assert elapsed < 10.0


def _pool(n_total: int = 1300, seed: int = 0) -> list[Dialogue]:
    rng = random.Random(seed)
    out = []
    for i in range(n_total):
        problem = CORE_PROBLEMS[min(int(rng.paretovariate(1.2)) - 1, 4)]
        emotion = rng.choice(CORE_EMOTIONS)
        out.append(Dialogue(f"pool-{i:04d}", problem, emotion, "", (Utterance(0, Role.SEEKER, f"u{i}"),)))
    return out


def test_criterion_7_sampler(tmp_path):
    with criterion(7, "stratified sampler (1,000 random tables, fixed-seed 200-dialogue subset)"):
        rng = random.Random(7)
        for _ in range(1000):
            k = rng.randrange(1, 31)
            counts = {f"s{j}": rng.randrange(1, 400) for j in range(k)}
            total = sum(counts.values())
            n = rng.randrange(0, total + 1)
            quotas = apportion(counts, n)
            assert sum(quotas.values()) == n
            assert all(abs(quotas[s] - Fraction(n * c, total)) < 1 for s, c in counts.items())
        pool = tmp_path / "pool.jsonl"
        write_corpus(_pool(), pool)
        subsets = []
        for name in ("a", "b"):
            assert main(["sample", "--corpus", str(pool), "--n", "200", "--seed", "42", "--out", str(tmp_path / name)]) == 0
            subsets.append((tmp_path / name / "sample.jsonl").read_bytes())
        assert subsets[0] == subsets[1]
        assert len(load_corpus(tmp_path / "a" / "sample.jsonl")) == 200


def test_criterion_8_always_seven_harness(tmp_path, capsys, surrogate_file):
    path, label = gold_source(surrogate_file)
    note = f"{label}; published zero-shot model scores need proprietary endpoints and are not claimed"
    with criterion(8, "zero-shot harness on a scripted always-level-7 model", note):
        run = tmp_path / "run"
        assert main(["eval", "run", "--corpus", str(path), "--mock", str(FIXTURES / "mock_always7.yaml"),
                     "--out", str(run)]) == 0
        gold = {(d.id, t.index): t.level for d in load_corpus(path) for t in d.turns if t.role is Role.SEEKER}
        rep = compute_metrics(read_predictions(run / "predictions.jsonl"), gold)
        n = len(gold)
        n7 = sum(1 for v in gold.values() if v == 7)
        share = n7 / n
        assert rep.accuracy == share
        if not os.environ.get("DMRS_GOLD_CORPUS"):
            assert (n7, n) == (1211, 2336) and round(100 * share, 1) == 51.8
        f1_7 = 2 * share / (share + 1)  # precision = share, recall = 1
        assert abs(rep.per_class[7].f1 - f1_7) <= 1e-12
        assert all(rep.per_class[c].f1 == 0.0 for c in range(9) if c != 7)
        assert abs(rep.macro.f1 - f1_7 / 8) <= 1e-12
        assert rep.confusion.counts[7][7] == n7
        assert sum(row[7] for row in rep.confusion.counts) == n

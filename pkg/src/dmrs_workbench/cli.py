"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 finished with degraded analyses,
3 configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .analytics import (
    ALL,
    emit_report,
    full_report,
    level_distribution,
    load_timing,
    timing_csv,
    timing_speedup,
    trajectory,
)
from .annotation import (
    apply_gold,
    cohen_kappa,
    disagreements,
    dump_tasks,
    export_preannotations,
    load_adjudications,
    load_annotations,
    merge_gold,
    split_by_annotator,
)
from .copilot import CoPilot, read_results, subset_chain_violations, write_results
from .corpus import (
    CORE_EMOTIONS,
    CORE_PROBLEMS,
    all_instances,
    corpus_stats,
    ingest_esconv,
    load_corpus,
    stratified_sample,
    validate_gold,
    write_corpus,
)
from .errors import ConfigError, TemplateError, ValidationError, WorkbenchError
from .evaluator import compute_metrics, read_predictions, report, run_zero_shot, write_predictions
from .llm import Gateway, HttpProvider, MockProvider, load_config
from .prompts import builtin_template, load_templates
from .taxonomy import ScoreMapping, load_item_registry

log = logging.getLogger("dmrs_workbench")

EXIT_OK, EXIT_INVALID, EXIT_DEGRADED, EXIT_CONFIG = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Collects run metadata and writes ``manifest.json`` into the output directory."""

    def __init__(self, command: str, argv: Sequence[str]) -> None:
        self.data: dict = {
            "command": command,
            "argv": list(argv),
            "tool_version": __version__,
            "started": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "inputs": {},
            "config_digest": None,
            "seed": None,
        }

    def input(self, path: str | Path | None) -> None:
        if path is not None and Path(path).is_file():
            self.data["inputs"][str(path)] = _digest(path)

    def write(self, out: Path, status: str, extra: dict | None = None) -> None:
        self.data["finished"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.data["status"] = status
        if extra:
            self.data.update(extra)
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _gateway(args, manifest: Manifest) -> Gateway:
    config = load_config(args.config)
    if getattr(args, "fanout", None):
        config = config.with_overrides(fanout=args.fanout)
    manifest.input(args.config)
    manifest.data["config_digest"] = config.digest()
    if args.mock:
        manifest.input(args.mock)
        try:
            provider = MockProvider.from_script(args.mock)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load mock script {args.mock}: {exc}") from exc
        if args.seed is not None:
            provider.seed = args.seed
        manifest.data["seed"] = provider.seed
    else:
        provider = HttpProvider(config)
    return Gateway(config, provider)


# -- subcommands ------------------------------------------------------------------------


def cmd_ingest(args, manifest: Manifest) -> int:
    manifest.input(args.esconv)
    dialogues = ingest_esconv(args.esconv, strict=not args.lenient)
    out = _out(args)
    write_corpus(dialogues, out / "corpus.jsonl")
    print(f"ingested {len(dialogues)} dialogues -> {out / 'corpus.jsonl'}")
    manifest.write(out, "ok", {"dialogues": len(dialogues)})
    return EXIT_OK


def cmd_sample(args, manifest: Manifest) -> int:
    manifest.input(args.corpus)
    manifest.data["seed"] = args.seed
    dialogues = load_corpus(args.corpus)
    if not args.all_strata:
        dialogues = [d for d in dialogues if d.problem in CORE_PROBLEMS and d.emotion in CORE_EMOTIONS]
    subset = stratified_sample(dialogues, args.n, args.seed)
    out = _out(args)
    write_corpus(subset, out / "sample.jsonl")
    print(f"sampled {len(subset)} of {len(dialogues)} dialogues -> {out / 'sample.jsonl'}")
    manifest.write(out, "ok", {"n": args.n, "pool": len(dialogues)})
    return EXIT_OK


def cmd_stats(args, manifest: Manifest) -> int:
    manifest.input(args.corpus)
    dialogues = load_corpus(args.corpus)
    stats = corpus_stats(dialogues)
    if args.json:
        print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    else:
        print(stats.format_table())
    issues = validate_gold(dialogues)
    if issues and any(t.level is not None for d in dialogues for t in d.turns):
        for issue in issues[:20]:
            print(f"warning: {issue}", file=sys.stderr)
    if args.out:
        out = _out(args)
        (out / "stats.json").write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n")
        manifest.write(out, "ok")
    return EXIT_OK


def cmd_registry_check(args, manifest: Manifest) -> int:
    registry = load_item_registry(args.registry, strict=not args.lenient)
    per_level: dict[int, int] = {}
    for item in registry:
        per_level[item.level] = per_level.get(item.level, 0) + 1
    print(f"registry ok: {len(registry)} items; per level {dict(sorted(per_level.items()))}")
    return EXIT_OK


def cmd_copilot_run(args, manifest: Manifest) -> int:
    for p in (args.corpus, args.registry):
        manifest.input(p)
    registry = load_item_registry(args.registry, strict=not args.lenient_registry)
    dialogues = load_corpus(args.corpus)
    instances = all_instances(dialogues)
    if args.limit:
        instances = instances[: args.limit]
    gateway = _gateway(args, manifest)
    copilot = CoPilot(gateway, registry, templates=load_templates(args.templates))
    results = copilot.run_batch(instances, workers=args.workers)
    out = _out(args)
    write_results(results, out / "analysis.jsonl")
    degraded = sum(r.degraded for r in results)
    fallback = sum(r.fallback for r in results)
    broken = [(r.key, p) for r in results for p in subset_chain_violations(r, registry)]
    for key, problem in broken:
        log.error("audit trail violation at %s: %s", key, problem)
    print(f"analysed {len(results)} instances: {fallback} fallback, {degraded} degraded -> {out / 'analysis.jsonl'}")
    status = "degraded" if degraded else "ok"
    manifest.write(out, status, {"instances": len(results), "degraded": degraded, "fallback": fallback})
    if broken:
        return EXIT_INVALID
    return EXIT_DEGRADED if degraded else EXIT_OK


def cmd_export(args, manifest: Manifest) -> int:
    manifest.input(args.results)
    manifest.input(args.corpus)
    tasks = export_preannotations(read_results(args.results), load_corpus(args.corpus))
    out = _out(args)
    dump_tasks(tasks, out / "preannotations.json")
    print(f"exported {len(tasks)} tasks -> {out / 'preannotations.json'}")
    manifest.write(out, "ok", {"tasks": len(tasks)})
    return EXIT_OK


def _two_annotators(args, manifest: Manifest):
    if args.annotations:
        manifest.input(args.annotations)
        groups = split_by_annotator(load_annotations(args.annotations))
        if len(groups) != 2:
            raise ValidationError(f"expected exactly two annotators, found {sorted(groups)}")
        (n1, a1), (n2, a2) = sorted(groups.items())
        return n1, a1, n2, a2
    if not (args.a1 and args.a2):
        raise UsageError("give --annotations FILE or both --a1 and --a2")
    manifest.input(args.a1)
    manifest.input(args.a2)
    return args.a1, load_annotations(args.a1), args.a2, load_annotations(args.a2)


def cmd_kappa(args, manifest: Manifest) -> int:
    n1, a1, n2, a2 = _two_annotators(args, manifest)
    rep = cohen_kappa(a1, a2)
    diffs = disagreements(a1, a2)
    print(f"annotators: {n1} vs {n2}")
    print(f"n={rep.n}  observed={rep.observed:.4f}  expected={rep.expected:.4f}  kappa={rep.kappa:.3f}")
    print(f"disagreements: {len(diffs)}")
    if args.out:
        out = _out(args)
        payload = rep.to_dict()
        payload["disagreements"] = [
            {"dialogue_id": k[0], "utterance_index": k[1], "level_1": x, "level_2": y} for k, x, y in diffs
        ]
        (out / "agreement.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        manifest.write(out, "ok")
    return EXIT_OK


def cmd_merge_gold(args, manifest: Manifest) -> int:
    _, a1, _, a2 = _two_annotators(args, manifest)
    manifest.input(args.adjudications)
    adjudications = load_adjudications(args.adjudications) if args.adjudications else {}
    gold = merge_gold(a1, a2, adjudications)
    out = _out(args)
    with open(out / "gold_labels.jsonl", "w", encoding="utf-8") as fh:
        for g in gold:
            fh.write(json.dumps(g.to_dict(), sort_keys=True) + "\n")
    if args.corpus:
        manifest.input(args.corpus)
        write_corpus(apply_gold(load_corpus(args.corpus), gold), out / "gold_corpus.jsonl")
    adjudicated = sum(g.source.value == "Adjudicated" for g in gold)
    print(f"gold labels: {len(gold)} ({adjudicated} adjudicated) -> {out}")
    manifest.write(out, "ok", {"gold": len(gold), "adjudicated": adjudicated})
    return EXIT_OK


def _gold_map(path: str) -> dict:
    return {
        (d.id, t.index): t.level
        for d in load_corpus(path)
        for t in d.turns
        if t.level is not None and t.role.value == "seeker"
    }


def cmd_eval_run(args, manifest: Manifest) -> int:
    manifest.input(args.corpus)
    instances = all_instances(load_corpus(args.corpus))
    if args.limit:
        instances = instances[: args.limit]
    template = Path(args.template).read_text(encoding="utf-8") if args.template else builtin_template("zero_shot")
    gateway = _gateway(args, manifest)
    preds = run_zero_shot(instances, template, gateway)
    out = _out(args)
    write_predictions(preds, out / "predictions.jsonl")
    invalid = sum(p.invalid for p in preds)
    print(f"predicted {len(preds)} instances ({invalid} invalid) -> {out / 'predictions.jsonl'}")
    manifest.write(out, "ok", {"instances": len(preds), "invalid": invalid})
    return EXIT_OK


def cmd_eval_score(args, manifest: Manifest) -> int:
    manifest.input(args.predictions)
    manifest.input(args.gold)
    rep = compute_metrics(read_predictions(args.predictions), _gold_map(args.gold))
    print(
        f"n={rep.n} ACC={100 * rep.accuracy:.2f} P={100 * rep.macro.precision:.2f} "
        f"R={100 * rep.macro.recall:.2f} F1={100 * rep.macro.f1:.2f} "
        f"(present-class F1={100 * rep.macro_present.f1:.2f}; invalid={rep.invalid})"
    )
    if args.out:
        out = _out(args)
        (out / "metrics.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
        manifest.write(out, "ok")
    return EXIT_OK


def _pairs(values: Sequence[str], flag: str) -> dict[str, str]:
    out = {}
    for v in values or ():
        name, sep, rest = v.partition("=")
        if not sep:
            raise UsageError(f"{flag} expects NAME=VALUE, got {v!r}")
        out[name] = rest
    return out


def cmd_eval_report(args, manifest: Manifest) -> int:
    gold = _gold_map(args.gold)
    manifest.input(args.gold)
    models = _pairs(args.model, "--model")
    if not models:
        raise UsageError("eval report needs at least one --model NAME=predictions.jsonl")
    reports = {}
    for name, path in models.items():
        manifest.input(path)
        reports[name] = compute_metrics(read_predictions(path), gold)
    table = report(reports, _pairs(args.group, "--group"))
    out = _out(args)
    table.write(out)
    print(table.to_markdown(), end="")
    manifest.write(out, "ok")
    return EXIT_OK


def cmd_analyze_dist(args, manifest: Manifest) -> int:
    manifest.input(args.corpus)
    dialogues = load_corpus(args.corpus)
    group_by = None if args.group_by == "none" else args.group_by
    table = level_distribution(dialogues, group_by)
    name = args.group_by if group_by else ALL
    bundle = emit_report(dialogues, {name: table})
    print(bundle.files["summary.md"] if group_by is None else bundle.files[f"distribution_{name}.csv"], end="")
    if args.out:
        bundle.write(_out(args))
        manifest.write(Path(args.out), "ok")
    return EXIT_OK


def cmd_analyze_traj(args, manifest: Manifest) -> int:
    manifest.input(args.corpus)
    manifest.input(args.mapping)
    dialogues = load_corpus(args.corpus)
    mapping = ScoreMapping.from_file(args.mapping) if args.mapping else ScoreMapping.default()
    group_by = None if args.group_by == "none" else args.group_by
    curves = trajectory(dialogues, mapping, bins=args.bins, group_by=group_by, band=args.band)
    name = args.group_by if group_by else ALL
    bundle = emit_report(curves={name: curves})
    print(bundle.files[f"trajectory_{name}.csv"], end="")
    if args.out:
        bundle.write(_out(args))
        manifest.write(Path(args.out), "ok")
    return EXIT_OK


def cmd_analyze_timing(args, manifest: Manifest) -> int:
    manifest.input(args.log)
    result = timing_speedup(load_timing(args.log))
    print(timing_csv(result), end="")
    if args.out:
        emit_report(timing=result).write(_out(args))
        manifest.write(Path(args.out), "ok")
    return EXIT_OK


def cmd_analyze_report(args, manifest: Manifest) -> int:
    manifest.input(args.corpus)
    manifest.input(args.mapping)
    dialogues = load_corpus(args.corpus)
    mapping = ScoreMapping.from_file(args.mapping) if args.mapping else ScoreMapping.default()
    bundle = full_report(dialogues, mapping, band=args.band)
    if args.timing:
        manifest.input(args.timing)
        timing = timing_speedup(load_timing(args.timing))
        bundle.files["timing.csv"] = timing_csv(timing)
    out = _out(args)
    bundle.write(out)
    print(f"wrote {len(bundle.files)} files -> {out}")
    manifest.write(out, "ok")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dmrs", description="Defense-mechanism analysis workbench for support dialogues.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    llm = _Parser(add_help=False)
    llm.add_argument("--config", help="gateway config file (YAML or JSON)")
    llm.add_argument("--mock", help="mock provider script; no network calls are made")
    llm.add_argument("--fanout", type=int, help="override per-stage fan-out width")
    llm.add_argument("--seed", type=int, help="override the mock provider's seed")

    s = sub.add_parser("ingest", help="load ESConv-style JSON into the canonical corpus")
    s.add_argument("--esconv", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lenient", action="store_true", help="skip invalid dialogues, keep non-core types")
    s.set_defaults(func=cmd_ingest, leaf=s)

    s = sub.add_parser("sample", help="stratified subset over (problem, emotion)")
    s.add_argument("--corpus", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--all-strata", action="store_true", help="do not restrict to the core problem/emotion types")
    s.set_defaults(func=cmd_sample, leaf=s)

    s = sub.add_parser("stats", help="corpus statistics")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_stats, leaf=s)

    reg = sub.add_parser("registry", help="descriptive item registry tools")
    reg_sub = reg.add_subparsers(dest="registry_command", required=True, parser_class=_Parser)
    s = reg_sub.add_parser("check", help="validate a registry file")
    s.add_argument("--registry", required=True)
    s.add_argument("--lenient", action="store_true", help="allow registries other than 150 items")
    s.set_defaults(func=cmd_registry_check, leaf=s)

    cp = sub.add_parser("copilot", help="four-stage defense analysis")
    cp_sub = cp.add_subparsers(dest="copilot_command", required=True, parser_class=_Parser)
    s = cp_sub.add_parser("run", parents=[llm])
    s.add_argument("--corpus", required=True)
    s.add_argument("--registry", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--templates", help="directory of <stage>.txt overrides")
    s.add_argument("--limit", type=int)
    s.add_argument("--workers", type=int, default=1, help="instances analysed concurrently")
    s.add_argument("--lenient-registry", action="store_true")
    s.set_defaults(func=cmd_copilot_run, leaf=s)

    s = sub.add_parser("export-preann", help="labelling-platform import file from analyses")
    s.add_argument("--results", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export, leaf=s)

    ann = _Parser(add_help=False)
    ann.add_argument("--annotations", help="one file holding both annotators")
    ann.add_argument("--a1")
    ann.add_argument("--a2")

    s = sub.add_parser("kappa", parents=[ann], help="Cohen's kappa between two annotators")
    s.add_argument("--out")
    s.set_defaults(func=cmd_kappa, leaf=s)

    s = sub.add_parser("merge-gold", parents=[ann], help="merge double annotation into gold labels")
    s.add_argument("--adjudications")
    s.add_argument("--corpus", help="also write the corpus with gold levels attached")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_merge_gold, leaf=s)

    ev = sub.add_parser("eval", help="zero-shot benchmark harness")
    ev_sub = ev.add_subparsers(dest="eval_command", required=True, parser_class=_Parser)
    s = ev_sub.add_parser("run", parents=[llm])
    s.add_argument("--corpus", required=True)
    s.add_argument("--template")
    s.add_argument("--limit", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_run, leaf=s)
    s = ev_sub.add_parser("score")
    s.add_argument("--predictions", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval_score, leaf=s)
    s = ev_sub.add_parser("report")
    s.add_argument("--gold", required=True)
    s.add_argument("--model", action="append", help="NAME=predictions.jsonl (repeatable)")
    s.add_argument("--group", action="append", help="NAME=setup for best/second flags (repeatable)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval_report, leaf=s)

    an = sub.add_parser("analyze", help="distribution, trajectory and timing analyses")
    an_sub = an.add_subparsers(dest="analyze_command", required=True, parser_class=_Parser)
    s = an_sub.add_parser("dist")
    s.add_argument("--corpus", required=True)
    s.add_argument("--group-by", choices=("none", "emotion", "problem"), default="none")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze_dist, leaf=s)
    s = an_sub.add_parser("traj")
    s.add_argument("--corpus", required=True)
    s.add_argument("--group-by", choices=("none", "emotion", "problem"), default="emotion")
    s.add_argument("--bins", type=int, default=10)
    s.add_argument("--band", choices=("sd", "ci95"), default="sd")
    s.add_argument("--mapping", help="JSON level->score map; null or \"excluded\" drops a level")
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze_traj, leaf=s)
    s = an_sub.add_parser("timing")
    s.add_argument("--log", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_analyze_timing, leaf=s)
    s = an_sub.add_parser("report", help="full bundle: distributions and trajectories by every grouping")
    s.add_argument("--corpus", required=True)
    s.add_argument("--mapping")
    s.add_argument("--band", choices=("sd", "ci95"), default="sd")
    s.add_argument("--timing")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_analyze_report, leaf=s)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, extra = build_parser().parse_known_args(argv)
        if extra:
            args.leaf.error(f"unrecognized arguments: {' '.join(extra)}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    action = getattr(args, f"{args.command}_command", None)
    manifest = Manifest(f"{args.command} {action}" if action else args.command, argv)
    try:
        return args.func(args, manifest)
    except (ConfigError, TemplateError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (WorkbenchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

"""
Command-line interface: fuzz, replay, triage, translate, stats.

Exit codes: 0 ok, 1 usage error, 2 target/manifest error, 3 campaign
finished with zero findings (disable with --ok-empty).
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path
from typing import Optional

from . import constraints as cons
from .adapter import ManifestError, load_manifest
from .campaign import (
    Campaign,
    CampaignConfig,
    CampaignError,
    build_backend,
    make_executor,
)
from .dsl import DslError, parse, translate_to_c, validate
from .executor import ExecConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TARGET = 2
EXIT_NO_FINDINGS = 3


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apifuzz",
                                     description="library-API fuzzer")
    sub = parser.add_subparsers(dest="command", required=True)

    fuzz = sub.add_parser("fuzz", help="run a fuzzing campaign")
    fuzz.add_argument("--manifest", required=True, type=Path)
    fuzz.add_argument("--out", required=True, type=Path)
    budget = fuzz.add_mutually_exclusive_group(required=True)
    budget.add_argument("--execs", type=int)
    budget.add_argument("--seconds", type=float)
    fuzz.add_argument("--seed", type=int, default=0)
    fuzz.add_argument("--backend", choices=("synthetic", "ffi"),
                      default="synthetic")
    fuzz.add_argument("--binary", type=Path, help="shared library for --backend ffi")
    fuzz.add_argument("--ok-empty", action="store_true",
                      help="exit 0 even when the campaign found nothing")

    replay = sub.add_parser("replay", help="execute one stored program")
    replay.add_argument("file", type=Path)
    replay.add_argument("--manifest", type=Path)
    replay.add_argument("--backend", choices=("synthetic", "ffi"),
                        default="synthetic")
    replay.add_argument("--binary", type=Path)

    triage = sub.add_parser("triage", help="deduplicate and annotate crashes")
    triage.add_argument("--out", required=True, type=Path)

    translate = sub.add_parser("translate", help="lower a program to C source")
    translate.add_argument("file", type=Path)
    translate.add_argument("--manifest", required=True, type=Path)

    stats = sub.add_parser("stats", help="summarize a campaign directory")
    stats.add_argument("--out", required=True, type=Path)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    handler = {
        "fuzz": cmd_fuzz,
        "replay": cmd_replay,
        "triage": cmd_triage,
        "translate": cmd_translate,
        "stats": cmd_stats,
    }[args.command]
    try:
        return handler(args)
    except (ManifestError, CampaignError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_TARGET
    except DslError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


def _load(args) -> tuple:
    manifest = load_manifest(args.manifest)
    backend = build_backend(manifest, args.backend, getattr(args, "binary", None))
    return manifest, backend


def cmd_fuzz(args) -> int:
    manifest, backend = _load(args)
    config = CampaignConfig(seed=args.seed, max_execs=args.execs,
                            max_seconds=args.seconds)
    campaign = Campaign(manifest, backend, args.out, config)
    args.out.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(args.manifest, args.out / "manifest.json")
    summary = campaign.run()
    print(json.dumps(summary, indent=2, sort_keys=True))
    findings = summary["unique_crashes"] + summary["seeds"]
    if findings == 0 and not args.ok_empty:
        return EXIT_NO_FINDINGS
    return EXIT_OK


def _find_manifest_for(path: Path, explicit: Optional[Path]) -> Path:
    if explicit is not None:
        return explicit
    for candidate in (path.parent / "manifest.json",
                      path.parent.parent / "manifest.json"):
        if candidate.is_file():
            return candidate
    raise CampaignError(f"no manifest found near {path}; pass --manifest")


def cmd_replay(args) -> int:
    manifest_path = _find_manifest_for(args.file, args.manifest)
    manifest = load_manifest(manifest_path)
    backend = build_backend(manifest, args.backend, args.binary)
    text = args.file.read_text()
    program = parse(text, manifest.registry)
    diags = validate(program, manifest)
    if diags:
        for d in diags:
            print(f"invalid: {d}", file=sys.stderr)
        return EXIT_USAGE
    exec_seed = 0
    report_path = args.file.with_suffix("").with_suffix(".report.json")
    if report_path.is_file():
        exec_seed = json.loads(report_path.read_text()).get("exec_seed", 0)
    sandbox = args.file.parent / ".replay_sandbox"
    executor = make_executor(backend, ExecConfig(sandbox_dir=sandbox,
                                                 rng_seed=exec_seed))
    report = executor.execute(program)
    print(f"exit: {report.exit}")
    if report.exit_detail:
        print(f"detail: {report.exit_detail}")
    if report.fault is not None:
        f = report.fault
        print(f"fault: kind={f.kind} address={f.address:#x} site={f.site} "
              f"statement=<{f.stmt_index}>")
    print(f"coverage: {len(report.coverage)} edges")
    for ev in report.cmp_log[:8]:
        print(f"cmp: {ev.a} vs {ev.b} (width {ev.width})")
    for ev in report.resource_log:
        if ev.kind == "file_open":
            print(f"file_open: {ev.name}")
    return EXIT_OK


def cmd_triage(args) -> int:
    out: Path = args.out
    crash_dir = out / "crashes"
    manifest_path = out / "manifest.json"
    if not manifest_path.is_file():
        raise CampaignError(f"{out} has no manifest.json (not a campaign dir?)")
    manifest = load_manifest(manifest_path)
    store = cons.ConstraintStore()
    store_path = out / "constraints.jsonl"
    if store_path.is_file():
        store = cons.ConstraintStore.from_jsonl(store_path.read_text())
    rows = []
    if crash_dir.is_dir():
        for hdsl in sorted(crash_dir.glob("*.hdsl")):
            report_path = hdsl.with_suffix("").with_suffix(".report.json")
            meta = json.loads(report_path.read_text()) if report_path.is_file() else {}
            program = parse(hdsl.read_text(), manifest.registry)
            spurious = cons.violates(program, store, manifest)
            fault = meta.get("fault") or {}
            rows.append({
                "id": hdsl.stem,
                "kind": fault.get("kind", "?"),
                "site": fault.get("site", -1),
                "function": hdsl.stem.split("_", 1)[1] if "_" in hdsl.stem else "?",
                "spurious": spurious,
                "program": hdsl,
            })
            repro = translate_to_c(program, manifest)
            hdsl.with_suffix(".c").write_text(repro)
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["site"], row["function"]), []).append(row)
    print(f"{'group':<24} {'kind':<15} {'count':<6} spurious")
    for key in sorted(groups):
        members = groups[key]
        row = members[0]
        flag = "yes" if any(m["spurious"] for m in members) else "no"
        print(f"{row['id']:<24} {row['kind']:<15} {len(members):<6} {flag}")
    return EXIT_OK


def cmd_translate(args) -> int:
    manifest = load_manifest(args.manifest)
    program = parse(args.file.read_text(), manifest.registry)
    sys.stdout.write(translate_to_c(program, manifest))
    return EXIT_OK


def cmd_stats(args) -> int:
    out: Path = args.out
    summary_path = out / "summary.json"
    if not summary_path.is_file():
        raise CampaignError(f"{out} has no summary.json")
    summary = json.loads(summary_path.read_text())
    corpus = len(list((out / "corpus").glob("*.hdsl"))) if (out / "corpus").is_dir() else 0
    crashes = len(list((out / "crashes").glob("*.hdsl"))) if (out / "crashes").is_dir() else 0
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"corpus files: {corpus}")
    print(f"crash files: {crashes}")
    constraints_path = out / "constraints.jsonl"
    if constraints_path.is_file():
        for line in constraints_path.read_text().splitlines():
            doc = json.loads(line)
            loc = doc["locator"]
            path = "".join(f".{s}" for s in loc["path"])
            print(f"constraint: {doc['function']} arg{loc['arg']}{path} "
                  f"{doc['kind']} {doc.get('params', {})}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

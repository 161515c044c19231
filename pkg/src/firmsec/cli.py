"""Command-line front end: scan, stats, check, manifest validate."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import stats as st
from .elf import ElfError, NotElf
from .mitigations import MITIGATIONS, Status, scan_binary
from .pipeline import (
    RECORDS_FILE,
    SUMMARY_FILE,
    TMPDIR_ENV,
    ScanOptions,
    run_scan,
    tasks_from_inputs,
    tasks_from_manifest,
    write_records,
)
from .records import SchemaMismatch, load_results, split_records
from .unpack import SchemaError, ingest_manifest

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _warn(msg: str) -> None:
    print(f"firmsec: {msg}", file=sys.stderr)


# -- scan ----------------------------------------------------------------------

def cmd_scan(args) -> int:
    tasks = tasks_from_inputs(args.inputs)
    flagged = []
    if args.manifest:
        try:
            manifest_tasks, flagged = tasks_from_manifest(args.manifest)
        except (SchemaError, OSError) as exc:
            _warn(f"manifest: {exc}")
            return EXIT_USAGE
        tasks += manifest_tasks
        for row, why in flagged:
            _warn(f"manifest row {row} skipped: {why}")
    ids = [t.image_id for t in tasks]
    if len(set(ids)) != len(ids):
        _warn("duplicate inputs given; each image is scanned once")
        tasks = list({t.image_id: t for t in tasks}.values())
    if not tasks:
        _warn("nothing to scan")
        return EXIT_FAIL
    if args.jobs < 1:
        _warn("--jobs must be at least 1")
        return EXIT_USAGE

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    opts = ScanOptions(kallsyms=args.kallsyms, carve=args.carve, rar=args.rar)
    records, summary = run_scan(tasks, opts, args.jobs)
    summary.flagged_manifest_rows = len(flagged)
    write_records(records, out / RECORDS_FILE)
    (out / SUMMARY_FILE).write_text(json.dumps(summary.to_dict(), indent=1, sort_keys=True) + "\n")
    print(f"{summary.images} images ({summary.unpacked} unpacked), {summary.binaries} binaries, "
          f"{summary.kernels} kernels, {summary.errors} errors -> {out}")
    return EXIT_OK if summary.images else EXIT_FAIL


# -- stats ---------------------------------------------------------------------

def _policy(spec: dict) -> st.ApplicabilityPolicy:
    p = spec.get("policy", {})
    return st.ApplicabilityPolicy(release_cutoff=bool(p.get("release_cutoff", True)),
                                  exclude_uclibc_fortify=bool(p.get("exclude_uclibc_fortify", False)))


def _mitigations(spec: dict) -> tuple[str, ...]:
    if "mitigation" in spec:
        return (spec["mitigation"],)
    return tuple(spec.get("mitigations", MITIGATIONS))


def normalize_query(spec: dict) -> dict:
    """Accept the shorthand {"breakdown": "vendor", ...} as well as {"op": "breakdown", "axis": ...}."""
    spec = dict(spec)
    if "op" not in spec and "breakdown" in spec:
        spec["op"], spec["axis"] = "breakdown", spec.pop("breakdown")
    if "op" not in spec:
        raise ValueError(f"query lacks an op: {spec}")
    return spec


def run_query(spec: dict, binaries, kernels) -> tuple[str, object]:
    """Returns (default name, table) where a table is a list of rows or a dict."""
    op = spec["op"]
    policy = _policy(spec)
    if op == "adoption_rate":
        filters = {k: frozenset(v) for k, v in spec.get("filters", {}).items()}
        rows = []
        for m in _mitigations(spec):
            rate = st.adoption_rate(binaries, st.RateQuery(m, filters, policy=policy))
            rows.append({"mitigation": m, **rate.to_dict()})
        return "adoption_rate", rows
    if op == "breakdown":
        b = st.breakdown(binaries, spec["axis"], _mitigations(spec), policy)
        return f"breakdown_{spec['axis']}", b.to_table()
    if op == "time_series":
        m = _mitigations(spec)[0]
        return f"time_series_{m}", [{"x": x, "y": y} for x, y in st.time_series(binaries, m, policy)]
    if op == "evolution_scores":
        m = _mitigations(spec)[0]
        res = st.evolution_scores(binaries, m, policy)
        if res.skipped:
            _warn(f"evolution_scores: {res.skipped} families skipped (fewer than 2 dated versions)")
        return f"evolution_{m}", [s.to_dict() for s in res.scores]
    if op == "versioned_changes":
        res = st.versioned_binary_changes(binaries, _mitigations(spec))
        rows = res.to_table()
        rows.append({"mitigation": "identical_content", "no_change": res.identical_content,
                     "positive": None, "negative": None})
        return "versioned_changes", rows
    if op == "reuse":
        return "reuse", st.reuse_stats(binaries).to_dict()
    if op == "shared_rates":
        rates = st.shared_binary_rates(binaries, _mitigations(spec), policy)
        return "shared_rates", [{"mitigation": m, **r.to_dict()} for m, r in rates.items()]
    if op == "kernel_gap":
        gap = st.kernel_gap(kernels)
        for d in gap.diagnostics:
            _warn(d)
        if gap.excluded:
            _warn(f"kernel_gap: {gap.excluded} kernels lack a mapped release or build date")
        return "kernel_gap", gap.to_table()
    if op == "kernel_summary":
        return "kernel_summary", [{"mitigation": m, **c} for m, c in st.kernel_summary(kernels).items()]
    raise ValueError(f"unknown stats op {op!r}")


def _load_queries(path: str) -> list[dict]:
    spec = json.loads(Path(path).read_text())
    if isinstance(spec, dict):
        spec = spec.get("queries", [spec])
    return [normalize_query(q) for q in spec]


def _render(table, fmt: str) -> str:
    if fmt == "json" or isinstance(table, dict):
        return st.table_to_json(table)
    return st.table_to_csv(table)


def cmd_stats(args) -> int:
    try:
        queries = _load_queries(args.query)
    except (OSError, ValueError) as exc:
        _warn(f"query spec: {exc}")
        return EXIT_USAGE
    try:
        records = load_results(args.results_dir)
    except SchemaMismatch as exc:
        _warn(str(exc))
        return EXIT_USAGE
    binaries, kernels, _ = split_records(records)
    if not binaries and not kernels:
        _warn(f"no scan records under {args.results_dir}; rates are Undefined")
    out_dir = Path(args.output_dir) if args.output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    used: dict[str, int] = {}
    for q in queries:
        try:
            default, table = run_query(q, binaries, kernels)
        except (ValueError, KeyError) as exc:
            _warn(f"query {q}: {exc}")
            return EXIT_USAGE
        name = q.get("name", default)
        used[name] = used.get(name, 0) + 1
        if used[name] > 1:
            name = f"{name}_{used[name]}"
        text = _render(table, args.format)
        if out_dir:
            ext = "json" if args.format == "json" or isinstance(table, dict) else "csv"
            (out_dir / f"{name}.{ext}").write_text(text)
        else:
            sys.stdout.write(f"# {name}\n{text}")
    return EXIT_OK


# -- check ---------------------------------------------------------------------

def _fails(report, mitigation: str) -> bool:
    if mitigation == "relro":
        return report.relro_level.label == "None"
    return report.verdict(mitigation).status is not Status.PROTECTED


def cmd_check(args) -> int:
    try:
        data = Path(args.binary).read_bytes()
    except OSError as exc:
        _warn(str(exc))
        return EXIT_USAGE
    try:
        report = scan_binary(data, args.binary)
    except NotElf:
        _warn(f"{args.binary}: not an ELF file")
        return EXIT_USAGE
    except ElfError as exc:
        _warn(f"{args.binary}: {type(exc).__name__}: {exc}")
        return EXIT_USAGE
    if args.json:
        print(json.dumps(report.to_dict(), indent=1, sort_keys=True))
    else:
        print(f"{args.binary}: {report.arch}, {report.cls.label}, libc={report.cls.libc.value}"
              f"{', stripped' if report.cls.stripped else ''}")
        for m in MITIGATIONS:
            v = report.verdict(m)
            shown = v.level.label if m == "relro" and v.level is not None else v.status.value
            method = v.method.value if v.method else "-"
            print(f"  {m:<8} {shown:<14} [{method}] {'; '.join(v.evidence)}")
        for d in report.diagnostics:
            print(f"  note: {d}")
    fail_on = [m for m in (args.fail_on or "").split(",") if m]
    bad = [m for m in fail_on if m not in MITIGATIONS]
    if bad:
        _warn(f"--fail-on: unknown mitigation {', '.join(bad)}")
        return EXIT_USAGE
    return EXIT_FAIL if any(_fails(report, m) for m in fail_on) else EXIT_OK


# -- manifest ------------------------------------------------------------------

def cmd_manifest_validate(args) -> int:
    try:
        result = ingest_manifest(args.manifest)
    except SchemaError as exc:
        print(f"{args.manifest}: {exc}")
        return EXIT_USAGE
    except OSError as exc:
        _warn(str(exc))
        return EXIT_USAGE
    for row, why in result.flagged:
        print(f"row {row}: flagged: {why}")
    missing = [r for r in result.records if not os.path.exists(r.source_path)]
    for r in missing:
        print(f"{r.image_id}: file not found: {r.source_path}")
    print(f"{len(result.records)} images, {len(result.flagged)} flagged, {len(missing)} missing files")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="firmsec", description="Binary hardening audit for Linux firmware.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="unpack and analyse firmware images, binaries and kernels",
                       epilog=f"Set {TMPDIR_ENV} to choose the scratch directory.")
    p.add_argument("inputs", nargs="*", help="archives, blobs, directories or single binaries")
    p.add_argument("--manifest", help="CSV or JSON manifest of firmware images with metadata")
    p.add_argument("-o", "--output-dir", default="results", help="where records.ndjson and summary.json go")
    p.add_argument("-j", "--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--no-kallsyms", dest="kallsyms", action="store_false", help="skip kallsyms recovery")
    p.add_argument("--no-carve", dest="carve", action="store_false", help="do not carve blobs for kernels or ELFs")
    p.add_argument("--rar", action="store_true", help="expand RAR archives (needs the rarfile package)")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("stats", help="run statistics queries over scan results")
    p.add_argument("results_dir", help="directory of *.ndjson scan results (or one file)")
    p.add_argument("query", help="JSON query spec: one query object, a list, or {\"queries\": [...]}")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-o", "--output-dir", help="write one file per query instead of printing")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("check", help="report the hardening of one binary")
    p.add_argument("binary")
    p.add_argument("--fail-on", metavar="LIST", help="comma-separated mitigations that must be present")
    p.add_argument("--json", action="store_true", help="print the full report as JSON")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("manifest", help="manifest utilities")
    msub = p.add_subparsers(dest="manifest_command", required=True)
    v = msub.add_parser("validate", help="check a manifest without scanning")
    v.add_argument("manifest")
    v.set_defaults(func=cmd_manifest_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: scan, triage, probe, deceive, bench.

Exit codes:

    scan     0 no match, 1 at least one match, 2 error (or every file failed)
    triage   0 ok, 2 error
    probe    0 proceed, 3 evade, 2 error
    deceive  0 forced evasion, 4 no change, 2 error
    bench    0 ok, 2 usage error

JSON output is the stable contract; text output is for people.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Iterable

from . import __version__
from .bench import DEFAULT_ITERATIONS, WORKLOADS, run_bench
from .deception import (
    ForcedEvasionReport,
    diff_run,
    load_policy_file,
    load_shipped_policy,
)
from .envmodel import (
    EnvironmentSnapshot,
    SchemaError,
    bind_api,
    load_shipped_snapshot,
    load_snapshot_file,
    shipped_environments,
)
from .pe import packedness_flag
from .probes import (
    EVADE,
    PROCEED,
    SuiteReport,
    WatchlistSet,
    load_fingerprints,
    parse_categories,
    run_suite,
)
from .rulelang import CompiledRuleSet, RuleError, compile_rules, load_default_ruleset, parse_ruleset
from .triage import FileVerdicts, ScannedFile, TriageResult, scan_bytes, triage

EXIT_OK = 0
EXIT_MATCH = 1
EXIT_ERROR = 2
EXIT_EVADE = 3
EXIT_NO_CHANGE = 4

VERDICTS_FILE = "verdicts.csv"


class CliError(Exception):
    pass


def render_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _emit(args: argparse.Namespace, doc: dict, text: str) -> None:
    sys.stdout.write(render_json(doc) if args.format == "json" else text.rstrip("\n") + "\n")


# loading helpers


def _load_rules(path: str | None) -> CompiledRuleSet:
    try:
        if path is None:
            return compile_rules(load_default_ruleset())
        return compile_rules(parse_ruleset(Path(path).read_bytes()))
    except OSError as exc:
        raise CliError(f"cannot read rules: {exc}") from exc
    except RuleError as exc:
        raise CliError(f"rule error: {exc}") from exc


def _load_env(ref: str) -> EnvironmentSnapshot:
    """A snapshot file path, or the name of a shipped fixture such as ``kaspersky``."""
    path = Path(ref)
    if not path.exists() and ref in shipped_environments():
        return load_shipped_snapshot(ref)
    try:
        return load_snapshot_file(path)
    except OSError as exc:
        raise CliError(f"cannot read environment: {exc}") from exc
    except SchemaError as exc:
        raise CliError(f"environment schema error: {exc}") from exc


def _load_policy(ref: str | None):
    if ref is None:
        return load_shipped_policy("default")
    path = Path(ref)
    try:
        if not path.exists() and ref in ("default", "empty"):
            return load_shipped_policy(ref)
        return load_policy_file(path)
    except OSError as exc:
        raise CliError(f"cannot read policy: {exc}") from exc
    except ValueError as exc:
        raise CliError(f"policy error: {exc}") from exc


def _watchlists(ref: str | None) -> WatchlistSet:
    if ref is None:
        return WatchlistSet.default()
    try:
        return WatchlistSet.from_directory(ref)
    except OSError as exc:
        raise CliError(f"cannot read watchlists: {exc}") from exc


def _expand(paths: Iterable[str], skip: set[Path] = frozenset()) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(q for q in sorted(p.rglob("*")) if q.is_file() and q.resolve() not in skip)
        else:
            out.append(p)
    return out


# scan


def _pe_doc(f: ScannedFile) -> dict | None:
    if f.pe is None:
        return None
    doc = f.pe.to_dict()
    doc["likely_packed"] = packedness_flag(f.pe)
    return doc


def _file_doc(f: ScannedFile) -> dict:
    return {
        "path": f.path,
        "md5": f.md5,
        "size": len(f.data),
        "error": None,
        "matched_rules": f.matched_rules,
        "matches": {
            r.rule: {pid: list(offs) for pid, offs in sorted(r.offsets.items()) if offs}
            for r in f.report.rules
            if r.matched
        },
        "pe": _pe_doc(f),
        "pe_error": f.pe_error,
    }


def scan_paths(crs: CompiledRuleSet, paths: list[Path]) -> tuple[dict, int]:
    files, counts, errors = [], dict.fromkeys(crs.ruleset.names, 0), 0
    for path in paths:
        try:
            data = path.read_bytes()
        except OSError as exc:
            errors += 1
            files.append({"path": str(path), "error": str(exc)})
            continue
        f = scan_bytes(crs, data, str(path))
        for name in f.matched_rules:
            counts[name] += 1
        files.append(_file_doc(f))
    doc = {
        "files": files,
        "summary": {"files": len(files), "errors": errors, "rule_counts": counts},
    }
    if files and errors == len(files):
        code = EXIT_ERROR
    elif any(c for c in counts.values()):
        code = EXIT_MATCH
    else:
        code = EXIT_OK
    return doc, code


def _scan_text(doc: dict) -> str:
    lines = []
    for f in doc["files"]:
        if f["error"]:
            lines.append(f"{f['path']}: ERROR {f['error']}")
        else:
            hits = ", ".join(f["matched_rules"]) or "-"
            lines.append(f"{f['path']}  {f['md5']}  {hits}")
    s = doc["summary"]
    lines.append(f"{s['files']} file(s), {s['errors']} error(s)")
    for rule, n in s["rule_counts"].items():
        lines.append(f"  {rule:<24}{n:>5}")
    return "\n".join(lines)


def cmd_scan(args: argparse.Namespace) -> int:
    crs = _load_rules(args.rules)
    doc, code = scan_paths(crs, _expand(args.paths))
    _emit(args, doc, _scan_text(doc))
    return code


# triage


def triage_directory(directory: str, crs: CompiledRuleSet, verdicts: str | None) -> TriageResult:
    root = Path(directory)
    if not root.is_dir():
        raise CliError(f"not a directory: {directory}")
    vpath = Path(verdicts) if verdicts else root / VERDICTS_FILE
    try:
        provider = FileVerdicts.from_csv(vpath) if (verdicts or vpath.exists()) else FileVerdicts()
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load verdicts: {exc}") from exc
    scanned = []
    for path in _expand([directory], skip={vpath.resolve()}):
        try:
            scanned.append(scan_bytes(crs, path.read_bytes(), str(path)))
        except OSError as exc:
            raise CliError(f"cannot read {path}: {exc}") from exc
    return triage(scanned, provider, crs.ruleset.names)


def _triage_text(result: TriageResult) -> str:
    lines = [f"{len(result.records)} sample(s), {len(result.selected)} selected", ""]
    lines.append(f"{'Rule':<24}{'Matched':>8}{'Selected':>10}")
    for rule, n in result.rule_counts.items():
        lines.append(f"{rule:<24}{n:>8}{result.selected_rule_counts[rule]:>10}")
    lines += ["", f"{'Group':<7}MD5"]
    for letter, group in result.groups:
        for i, member in enumerate(group.members):
            lines.append(f"{letter if i == 0 else '':<7}{member}")
    return "\n".join(lines)


def cmd_triage(args: argparse.Namespace) -> int:
    result = triage_directory(args.directory, _load_rules(args.rules), args.verdicts)
    _emit(args, result.to_dict(), _triage_text(result))
    return EXIT_OK


# probe


def _probe_text(report: SuiteReport) -> str:
    enabled = ",".join(sorted(c.value for c in report.enabled)) or "none"
    lines = [f"evasion blocks: {enabled}"]
    for f in report.findings:
        mark = "DETECTED" if f.detected else "clean"
        detail = f" ({len(f.artifacts)}): " + ", ".join(f.artifacts) if f.detected else ""
        lines.append(f"  [{mark:^8}] {f.probe_id}{detail}")
    lines.append("verdicts: " + " ".join(f"{c.value}={v}" for c, v in sorted(report.verdicts.items())))
    if report.identified_av:
        lines.append(f"identified AV: {report.identified_av}")
    lines.append(f"decision: {EVADE if report.evade else PROCEED}")
    return "\n".join(lines)


def cmd_probe(args: argparse.Namespace) -> int:
    snapshot = _load_env(args.env)
    try:
        enabled = parse_categories(args.categories)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    try:
        fingerprints = load_fingerprints(args.fingerprints) if args.fingerprints else None
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load fingerprints: {exc}") from exc
    report = run_suite(bind_api(snapshot), _watchlists(args.watchlists), enabled, fingerprints)
    _emit(args, report.to_dict(), _probe_text(report))
    return EXIT_EVADE if report.evade else EXIT_OK


# deceive


def _deceive_text(report: ForcedEvasionReport) -> str:
    lines = [f"{'Probe':<22}{'Before':<10}{'After':<10}Flip"]
    for d in report.probes:
        before = "detect" if d.before.detected else "clean"
        after = "detect" if d.after.detected else "clean"
        lines.append(f"{d.probe_id:<22}{before:<10}{after:<10}{'*' if d.flipped else ''}")
    s = report.stats
    lines.append(f"verdict: {report.verdict.value} ({report.flip_count} flipped)")
    lines.append(f"interception: intercepted={s.intercepted} passthrough={s.passthrough} faked={s.faked}")
    return "\n".join(lines)


def cmd_deceive(args: argparse.Namespace) -> int:
    snapshot = _load_env(args.env)
    report = diff_run(snapshot, _load_policy(args.policy), _watchlists(args.watchlists))
    _emit(args, report.to_dict(), _deceive_text(report))
    return EXIT_OK if report.flip_count else EXIT_NO_CHANGE


# bench


def cmd_bench(args: argparse.Namespace) -> int:
    snapshot = _load_env(args.env) if args.env else None
    policy = _load_policy(args.policy) if args.policy else None
    report = run_bench(args.iterations, args.workload, snapshot, policy)
    _emit(args, report.to_dict(), report.render())
    return EXIT_OK


def _iterations(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 2:
        raise argparse.ArgumentTypeError("need at least 2 iterations")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evasionkit", description="Static triage and evasion-probe modeling toolkit."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "json"), default="text")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", parents=[common], help="match files against a rule set")
    p.add_argument("paths", nargs="*", help="files or directories")
    p.add_argument("--rules", help="rule file (default: shipped rules)")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("triage", parents=[common], help="select and group samples")
    p.add_argument("directory")
    p.add_argument("--rules")
    p.add_argument("--verdicts", help=f"md5,verdict CSV (default: <directory>/{VERDICTS_FILE})")
    p.set_defaults(func=cmd_triage)

    p = sub.add_parser("probe", parents=[common], help="run the evasion probe suite")
    p.add_argument("--env", required=True, help="snapshot file or shipped fixture name")
    p.add_argument("--categories", default="all", help="debugger,av,vm | all | none")
    p.add_argument("--watchlists", help="directory of <key>.<category>.txt files")
    p.add_argument("--fingerprints", help="AV fingerprint JSON")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("deceive", parents=[common], help="diff probe results with deception on")
    p.add_argument("--env", required=True)
    p.add_argument("--policy", help="policy file, or 'default' / 'empty'")
    p.add_argument("--watchlists")
    p.set_defaults(func=cmd_deceive)

    p = sub.add_parser("bench", parents=[common], help="measure deception overhead")
    p.add_argument("--iterations", type=_iterations, default=DEFAULT_ITERATIONS)
    p.add_argument("--workload", choices=WORKLOADS, default="probe-heavy")
    p.add_argument("--env")
    p.add_argument("--policy")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"evasionkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())

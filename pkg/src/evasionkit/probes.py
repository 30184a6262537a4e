"""Evasion probes grouped into debugger, AV and VM blocks.

Each probe is a fixed sequence of API calls plus a comparison against a
watchlist. :func:`run_suite` launches the probes of the enabled blocks and
turns findings into per-block evade/proceed verdicts, optionally naming the
installed antivirus by artifact overlap.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .envmodel import SUCCESS, ApiSurface, format_mac, normalize_path, parse_mac


class Category(str, Enum):
    DEBUGGER = "debugger"
    AV = "av"
    VM = "vm"

    def __str__(self) -> str:
        return self.value


ALL_CATEGORIES = frozenset(Category)

EVADE = "evade"
PROCEED = "proceed"

# Table rows describing which artifact each probe inspects.
ARTIFACT_KINDS = (
    "Process Names",
    "GUI Windows Names",
    "Debugger registers values",
    "Imported functions",
    "Registries Names & Values",
    "Folder Names",
    ".DLL Names",
    "Usernames",
    "MAC addresses",
)
CURSOR_KIND = "Cursor position"

LABEL_BEING_DEBUGGED = "being_debugged"
LABEL_STATIC_CURSOR = "static_cursor"


def parse_categories(text: str | Iterable[str] | None) -> frozenset[Category]:
    """``"debugger,av"`` -> {DEBUGGER, AV}; ``"none"`` or ``""`` -> empty; None -> all."""
    if text is None:
        return ALL_CATEGORIES
    if isinstance(text, str):
        items = [t.strip().lower() for t in text.split(",") if t.strip()]
    else:
        items = [str(t).lower() for t in text]
    if items in ([], ["none"]):
        return frozenset()
    if items == ["all"]:
        return ALL_CATEGORIES
    try:
        return frozenset(Category(i) for i in items)
    except ValueError:
        raise ValueError(f"unknown category in {items}; expected debugger, av, vm") from None


# -- watchlists ----------------------------------------------------------------


def read_watchlist(text: str) -> tuple[str, ...]:
    entries = []
    for line in text.splitlines():
        line = line.split(" #", 1)[0].strip()
        if line and not line.startswith("#"):
            entries.append(line)
    return tuple(entries)


@dataclass(frozen=True)
class WatchlistSet:
    """Watchlist entries keyed by ``(watchlist_key, category)``."""

    lists: Mapping[tuple[str, Category], tuple[str, ...]]

    def entries(self, key: str, categories: Iterable[Category]) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for cat in sorted(categories, key=lambda c: c.value):
            for entry in self.lists.get((key, cat), ()):
                seen.setdefault(entry, None)
        return tuple(seen)

    @classmethod
    def from_directory(cls, path) -> WatchlistSet:
        """Read ``<key>.<category>.txt`` files from a directory or resource tree."""
        if isinstance(path, str):
            path = Path(path)
        lists = {}
        for item in path.iterdir():
            parts = item.name.split(".")
            if len(parts) != 3 or parts[2] != "txt":
                continue
            lists[(parts[0], Category(parts[1]))] = read_watchlist(item.read_text(encoding="utf-8"))
        return cls(lists)

    @classmethod
    def default(cls) -> WatchlistSet:
        return cls.from_directory(resources.files("evasionkit.data").joinpath("watchlists"))


def load_fingerprints(path: str | Path | None = None) -> dict[str, tuple[str, ...]]:
    if path is None:
        text = resources.files("evasionkit.data").joinpath("av_fingerprints.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return {name: tuple(entries) for name, entries in json.loads(text).items()}


# -- catalog -------------------------------------------------------------------


@dataclass(frozen=True)
class Probe:
    id: str
    categories: frozenset[Category]
    artifact_kind: str
    api_plan: tuple[str, ...]
    watchlist_key: str | None

    def call_plan(self, watchlists: WatchlistSet, categories: Iterable[Category] | None = None) -> Counter:
        """API calls one run of this probe makes, computed without running it."""
        cats = self._scope(categories)
        entries = watchlists.entries(self.watchlist_key, cats) if self.watchlist_key else ()
        plan: Counter = Counter()
        if not cats:
            return plan
        if self.id == "registry_artifacts":
            for e in entries:
                plan["reg_query_value" if "|" in e else "reg_open_key"] += 1
        elif self.id == "cursor_static":
            plan["get_cursor_pos"] = 2
        elif self.id in _PER_ENTRY:
            (fn,) = self.api_plan
            if entries:
                plan[fn] = len(entries)
        else:
            (fn,) = self.api_plan
            plan[fn] = 1
        return plan

    def _scope(self, categories: Iterable[Category] | None) -> frozenset[Category]:
        if categories is None:
            return self.categories
        return self.categories & frozenset(categories)


@dataclass(frozen=True)
class ProbeFinding:
    probe_id: str
    detected: bool
    artifacts: tuple[str, ...] = ()
    by_category: Mapping[Category, tuple[str, ...]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "probe": self.probe_id,
            "detected": self.detected,
            "artifacts": list(self.artifacts),
            "by_category": {c.value: list(a) for c, a in sorted(self.by_category.items())},
        }


@dataclass(frozen=True)
class SuiteReport:
    findings: tuple[ProbeFinding, ...]
    verdicts: Mapping[Category, str]
    enabled: frozenset[Category]
    identified_av: str | None = None

    @property
    def evade(self) -> bool:
        return any(v == EVADE for v in self.verdicts.values())

    def finding(self, probe_id: str) -> ProbeFinding:
        for f in self.findings:
            if f.probe_id == probe_id:
                return f
        raise KeyError(probe_id)

    def to_dict(self) -> dict:
        return {
            "enabled": sorted(c.value for c in self.enabled),
            "findings": [f.to_dict() for f in self.findings],
            "verdicts": {c.value: self.verdicts[c] for c in sorted(self.verdicts)},
            "identified_av": self.identified_av,
            "decision": EVADE if self.evade else PROCEED,
        }


D, A, V = Category.DEBUGGER, Category.AV, Category.VM

_CATALOG = (
    Probe("proc_names", frozenset({D, A, V}), "Process Names", ("snapshot_processes",), "processes"),
    Probe("window_names", frozenset({D}), "GUI Windows Names", ("find_window",), "windows"),
    Probe("debugger_flag", frozenset({D}), "Debugger registers values", ("is_debugger_present",), None),
    Probe("hw_debug_registers", frozenset({D}), "Debugger registers values", ("get_thread_context",), None),
    Probe("module_exports", frozenset({D, V}), "Imported functions", ("get_module_handle",), "modules"),
    Probe(
        "registry_artifacts",
        frozenset({D}),
        "Registries Names & Values",
        ("reg_open_key", "reg_query_value"),
        "registry",
    ),
    Probe("folder_names", frozenset({A, V}), "Folder Names", ("get_file_attributes",), "folders"),
    Probe("dll_names", frozenset({V}), ".DLL Names", ("create_file",), "dll_files"),
    Probe("usernames", frozenset({V}), "Usernames", ("get_username",), "usernames"),
    Probe("mac_prefixes", frozenset({V}), "MAC addresses", ("get_adapters",), "mac_ouis"),
    Probe("cursor_static", frozenset({D}), CURSOR_KIND, ("get_cursor_pos",), None),
)

_PER_ENTRY = {"window_names", "module_exports", "folder_names", "dll_names"}


def probe_catalog() -> tuple[Probe, ...]:
    return _CATALOG


def get_probe(probe_id: str) -> Probe:
    for p in _CATALOG:
        if p.id == probe_id:
            return p
    raise KeyError(probe_id)


# -- probe bodies ----------------------------------------------------------------


def _name_hits(observed: Iterable[str], entries: Iterable[str]) -> list[str]:
    needles = [e.lower() for e in entries]
    hits: dict[str, None] = {}
    for name in observed:
        low = name.lower()
        if any(n in low for n in needles):
            hits.setdefault(name, None)
    return list(hits)


def _proc_names(api: ApiSurface, entries_for):
    procs = [p.name for p in api.snapshot_processes()]
    return {cat: _name_hits(procs, entries) for cat, entries in entries_for.items()}


def _per_entry(call: Callable[[ApiSurface, str], bool]):
    def run(api: ApiSurface, entries_for):
        # one query per distinct entry, attributed to every category listing it
        ordered: dict[str, None] = {}
        for entries in entries_for.values():
            for e in entries:
                ordered.setdefault(e, None)
        found = {e for e in ordered if call(api, e)}
        return {cat: [e for e in entries if e in found] for cat, entries in entries_for.items()}

    return run


def _registry_query(api: ApiSurface, entry: str) -> bool:
    path, sep, value_name = entry.partition("|")
    if sep:
        return api.reg_query_value(path, value_name).status == SUCCESS
    return api.reg_open_key(path).status == SUCCESS


def _single(check: Callable[[ApiSurface], list[str]]):
    def run(api: ApiSurface, entries_for):
        artifacts = check(api)
        return {cat: artifacts for cat in entries_for}

    return run


def _debugger_flag(api: ApiSurface) -> list[str]:
    return [LABEL_BEING_DEBUGGED] if api.is_debugger_present() else []


def _hw_registers(api: ApiSurface) -> list[str]:
    return [f"Dr{i}" for i, value in enumerate(api.get_thread_context()) if value]


def _cursor_static(api: ApiSurface) -> list[str]:
    first = api.get_cursor_pos()
    second = api.get_cursor_pos()
    return [LABEL_STATIC_CURSOR] if tuple(first) == tuple(second) else []


def _usernames(api: ApiSurface, entries_for):
    user = api.get_username()
    return {cat: _name_hits([user], entries) if user else [] for cat, entries in entries_for.items()}


def _mac_prefixes(api: ApiSurface, entries_for):
    macs = api.get_adapters()
    out = {}
    for cat, entries in entries_for.items():
        ouis = {parse_mac(e)[:3] for e in entries}
        out[cat] = list(dict.fromkeys(format_mac(m) for m in macs if bytes(m[:3]) in ouis))
    return out


_BODIES = {
    "proc_names": _proc_names,
    "window_names": _per_entry(lambda api, e: api.find_window(e) != 0),
    "debugger_flag": _single(_debugger_flag),
    "hw_debug_registers": _single(_hw_registers),
    "module_exports": _per_entry(lambda api, e: api.get_module_handle(e).status == SUCCESS),
    "registry_artifacts": _per_entry(_registry_query),
    "folder_names": _per_entry(lambda api, e: api.get_file_attributes(e).status == SUCCESS),
    "dll_names": _per_entry(lambda api, e: api.create_file(e).status == SUCCESS),
    "usernames": _usernames,
    "mac_prefixes": _mac_prefixes,
    "cursor_static": _single(_cursor_static),
}


def run_probe(
    p: Probe,
    api: ApiSurface,
    watchlists: WatchlistSet | None = None,
    categories: Iterable[Category] | None = None,
) -> ProbeFinding:
    """Execute one probe. ``categories`` narrows which watchlist sections it consults."""
    watchlists = watchlists or WatchlistSet.default()
    cats = sorted(p._scope(categories), key=lambda c: c.value)
    if not cats:
        return ProbeFinding(p.id, False)
    if p.watchlist_key is None:
        entries_for = {cat: () for cat in cats}
    else:
        entries_for = {cat: watchlists.entries(p.watchlist_key, [cat]) for cat in cats}
    by_cat = _BODIES[p.id](api, entries_for)
    artifacts = tuple(dict.fromkeys(a for cat in cats for a in by_cat[cat]))
    return ProbeFinding(
        p.id,
        bool(artifacts),
        artifacts,
        {cat: tuple(by_cat[cat]) for cat in cats if by_cat[cat]},
    )


def identify_av(report: SuiteReport, signatures: Mapping[str, Iterable[str]]) -> str | None:
    """AV whose fingerprint overlaps most with the detected artifacts; ties go to the
    lexicographically first name; None when nothing overlaps."""
    artifacts = [normalize_path(a) for f in report.findings for a in f.artifacts]
    best_name, best_score = None, 0
    for name in sorted(signatures):
        score = sum(
            1 for entry in signatures[name] if any(normalize_path(entry) in a for a in artifacts)
        )
        if score > best_score:
            best_name, best_score = name, score
    return best_name


def suite_call_plan(
    watchlists: WatchlistSet, enabled: Iterable[Category] = ALL_CATEGORIES
) -> Counter:
    enabled = frozenset(enabled)
    total: Counter = Counter()
    for p in _CATALOG:
        if p.categories & enabled:
            total.update(p.call_plan(watchlists, enabled))
    return total


def run_suite(
    api: ApiSurface,
    watchlists: WatchlistSet | None = None,
    enabled: Iterable[Category] = ALL_CATEGORIES,
    fingerprints: Mapping[str, Iterable[str]] | None = None,
) -> SuiteReport:
    watchlists = watchlists or WatchlistSet.default()
    enabled = frozenset(enabled)
    findings = tuple(
        run_probe(p, api, watchlists, enabled) for p in _CATALOG if p.categories & enabled
    )
    verdicts = {}
    for cat in Category:
        hit = cat in enabled and any(cat in f.by_category for f in findings)
        verdicts[cat] = EVADE if hit else PROCEED
    report = SuiteReport(findings, verdicts, enabled)
    if Category.AV in enabled:
        av_only = SuiteReport(
            tuple(
                ProbeFinding(f.probe_id, True, f.by_category[Category.AV])
                for f in findings
                if Category.AV in f.by_category
            ),
            verdicts,
            enabled,
        )
        fp = fingerprints if fingerprints is not None else load_fingerprints()
        report = SuiteReport(findings, verdicts, enabled, identify_av(av_only, fp))
    return report

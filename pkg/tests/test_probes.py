from __future__ import annotations

import copy

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evasionkit.envmodel import API_FUNCTIONS, bind_api, call_counts, load_shipped_snapshot, load_snapshot
from evasionkit.probes import (
    ALL_CATEGORIES,
    ARTIFACT_KINDS,
    EVADE,
    PROCEED,
    Category,
    ProbeFinding,
    SuiteReport,
    WatchlistSet,
    get_probe,
    identify_av,
    load_fingerprints,
    parse_categories,
    probe_catalog,
    read_watchlist,
    run_probe,
    run_suite,
)

D, A, V = "debugger", "av", "vm"

# Artifact rows by category, as marked in the published artifact table.
ARTIFACT_INCIDENCE = {
    "Process Names": {D, A, V},
    "GUI Windows Names": {D},
    "Debugger registers values": {D},
    "Imported functions": {D, V},
    "Registries Names & Values": {D},
    "Folder Names": {A, V},
    ".DLL Names": {V},
    "Usernames": {V},
    "MAC addresses": {V},
}

# (folder names, process names) per antivirus
AV_COUNTS = {
    "windows_defender": ("Windows Defender", 3, 1),
    "immunet": ("Immunet", 1, 1),
    "kaspersky": ("Kaspersky", 4, 4),
    "avast": ("Avast", 2, 2),
    "avg": ("AVG", 2, 2),
    "avira": ("Avira", 1, 9),
    "k7": ("K7 Computing", 2, 9),
}


def with_host(doc, **changes):
    doc = copy.deepcopy(doc)
    for key, value in changes.items():
        doc[key] = value
    return load_snapshot(doc)


# catalog


def test_catalog_ids():
    assert [p.id for p in probe_catalog()] == [
        "proc_names",
        "window_names",
        "debugger_flag",
        "hw_debug_registers",
        "module_exports",
        "registry_artifacts",
        "folder_names",
        "dll_names",
        "usernames",
        "mac_prefixes",
        "cursor_static",
    ]


def test_artifact_incidence():
    incidence: dict[str, set[str]] = {}
    for p in probe_catalog():
        if p.artifact_kind in ARTIFACT_KINDS:
            incidence.setdefault(p.artifact_kind, set()).update(c.value for c in p.categories)
    assert incidence == ARTIFACT_INCIDENCE
    assert set(ARTIFACT_KINDS) == set(ARTIFACT_INCIDENCE)


def test_vm_probes():
    vm = {p.id for p in probe_catalog() if Category.VM in p.categories}
    assert vm == {"proc_names", "module_exports", "folder_names", "dll_names", "usernames", "mac_prefixes"}


def test_get_file_attributes_callers():
    assert {p.id for p in probe_catalog() if "get_file_attributes" in p.api_plan} == {"folder_names"}


def test_api_plans_within_surface():
    for p in probe_catalog():
        assert set(p.api_plan) <= set(API_FUNCTIONS)


def test_get_probe():
    assert get_probe("usernames").watchlist_key == "usernames"
    with pytest.raises(KeyError):
        get_probe("nope")


@pytest.mark.parametrize(
    "text, expected",
    [
        ("debugger,av,vm", ALL_CATEGORIES),
        ("all", ALL_CATEGORIES),
        ("none", frozenset()),
        ("", frozenset()),
        (" AV , vm", frozenset({Category.AV, Category.VM})),
        (None, ALL_CATEGORIES),
    ],
)
def test_parse_categories(text, expected):
    assert parse_categories(text) == expected


def test_parse_categories_rejects_unknown():
    with pytest.raises(ValueError):
        parse_categories("debugger,gpu")


def test_read_watchlist_comments():
    assert read_watchlist("# head\nfoo.exe\n\n  bar.exe  # trailing\n#baz\n") == ("foo.exe", "bar.exe")


# single probes


def test_empty_host_detects_nothing(quiet_host_doc, watchlists):
    api = bind_api(load_snapshot(quiet_host_doc))
    for p in probe_catalog():
        finding = run_probe(p, api, watchlists)
        assert not finding.detected, p.id


def test_single_point_trace_reads_as_static_cursor(empty_host_doc, watchlists):
    report = run_suite(bind_api(load_snapshot(empty_host_doc)), watchlists)
    assert [f.probe_id for f in report.findings if f.detected] == ["cursor_static"]


def test_proc_names_ollydbg(empty_host_doc, watchlists):
    snap = with_host(empty_host_doc, processes=[{"name": "ollydbg.exe", "pid": 10}])
    finding = run_probe(get_probe("proc_names"), bind_api(snap), watchlists)
    assert finding.detected
    assert finding.artifacts == ("ollydbg.exe",)
    assert set(finding.by_category) == {Category.DEBUGGER}


def test_proc_names_substring_case_insensitive(empty_host_doc, watchlists):
    snap = with_host(empty_host_doc, processes=[{"name": "C:\\tools\\OLLYDBG.EXE", "pid": 10}])
    assert run_probe(get_probe("proc_names"), bind_api(snap), watchlists).artifacts == ("C:\\tools\\OLLYDBG.EXE",)


def test_mac_prefix_virtualbox(empty_host_doc, watchlists):
    snap = with_host(empty_host_doc, nics=[{"mac": "08:00:27:aa:bb:cc"}, {"mac": "3c:52:82:00:00:01"}])
    finding = run_probe(get_probe("mac_prefixes"), bind_api(snap), watchlists)
    assert finding.detected
    assert finding.artifacts == ("08:00:27:aa:bb:cc",)


def test_debugger_flag_and_registers(empty_host_doc, watchlists):
    snap = with_host(empty_host_doc, debugger={"being_debugged": True, "hw_registers": [0, 0, 5, 0]})
    api = bind_api(snap)
    assert run_probe(get_probe("debugger_flag"), api, watchlists).artifacts == ("being_debugged",)
    assert run_probe(get_probe("hw_debug_registers"), api, watchlists).artifacts == ("Dr2",)


def test_cursor_static_two_reads(empty_host_doc, watchlists):
    moving = bind_api(with_host(empty_host_doc, cursor_trace=[[1, 1], [2, 2]]))
    assert not run_probe(get_probe("cursor_static"), moving, watchlists).detected
    assert call_counts(moving)["get_cursor_pos"] == 2
    still = bind_api(with_host(empty_host_doc, cursor_trace=[[5, 5]]))
    assert run_probe(get_probe("cursor_static"), still, watchlists).detected


def test_registry_key_and_value_entries(empty_host_doc, watchlists):
    snap = with_host(
        empty_host_doc,
        registry={
            "HKEY_CURRENT_USER\\Software\\OllyDbg": {},
            "HKCU\\Software\\Sysinternals\\Process Monitor": {"EulaAccepted": 1},
        },
    )
    finding = run_probe(get_probe("registry_artifacts"), bind_api(snap), watchlists)
    assert "HKCU\\Software\\OllyDbg" in finding.artifacts
    assert "HKCU\\Software\\Sysinternals\\Process Monitor|EulaAccepted" in finding.artifacts
    assert "HKCU\\Software\\Sysinternals\\Process Explorer|EulaAccepted" not in finding.artifacts


def test_usernames_and_windows(empty_host_doc, watchlists):
    snap = with_host(empty_host_doc, users=["Sandbox"], windows=["WinDbgFrameClass"])
    api = bind_api(snap)
    assert run_probe(get_probe("usernames"), api, watchlists).artifacts == ("Sandbox",)
    assert run_probe(get_probe("window_names"), api, watchlists).artifacts == ("WinDbgFrameClass",)


def test_category_scope_limits_watchlist(empty_host_doc, watchlists):
    snap = with_host(empty_host_doc, processes=[{"name": "ollydbg.exe", "pid": 4}, {"name": "vmtoolsd.exe", "pid": 8}])
    p = get_probe("proc_names")
    assert run_probe(p, bind_api(snap), watchlists, [Category.VM]).artifacts == ("vmtoolsd.exe",)
    assert not run_probe(p, bind_api(snap), watchlists, [Category.AV]).detected


# suites


def test_zero_blocks(empty_host_doc, watchlists):
    api = bind_api(load_shipped_snapshot("saturated"))
    before = call_counts(api)
    report = run_suite(api, watchlists, frozenset())
    assert report.findings == ()
    assert set(report.verdicts.values()) == {PROCEED}
    assert not report.evade
    assert report.identified_av is None
    assert call_counts(api) == before


def test_clean_and_saturated_hosts(watchlists):
    clean = run_suite(bind_api(load_shipped_snapshot("clean")), watchlists)
    assert not any(f.detected for f in clean.findings)
    assert not clean.evade
    saturated = run_suite(bind_api(load_shipped_snapshot("saturated")), watchlists)
    assert all(f.detected for f in saturated.findings)
    assert set(saturated.verdicts.values()) == {EVADE}


@pytest.mark.parametrize("fixture", sorted(AV_COUNTS))
def test_av_artifact_counts(fixture, watchlists):
    name, folders, procs = AV_COUNTS[fixture]
    report = run_suite(bind_api(load_shipped_snapshot(fixture)), watchlists, {Category.AV})
    assert len(report.finding("folder_names").artifacts) == folders
    assert len(report.finding("proc_names").artifacts) == procs
    assert report.identified_av == name
    assert report.verdicts[Category.AV] == EVADE
    assert report.verdicts[Category.DEBUGGER] == PROCEED


def test_verdict_is_evade_iff_category_detected(watchlists, quiet_host_doc):
    snap = with_host(quiet_host_doc, users=["sandbox"])
    report = run_suite(bind_api(snap), watchlists)
    assert report.verdicts == {Category.DEBUGGER: PROCEED, Category.AV: PROCEED, Category.VM: EVADE}
    assert report.evade
    doc = report.to_dict()
    assert doc["decision"] == EVADE
    assert doc["verdicts"] == {"av": PROCEED, "debugger": PROCEED, "vm": EVADE}


def test_identify_av_none_on_empty(quiet_host_doc, watchlists):
    report = run_suite(bind_api(load_snapshot(quiet_host_doc)), watchlists, {Category.AV})
    assert report.identified_av is None


def test_identify_av_tie_breaks_lexicographically():
    report = SuiteReport(
        (ProbeFinding("proc_names", True, ("zeta.exe", "alpha.exe")),),
        {},
        frozenset({Category.AV}),
    )
    sigs = {"Zeta AV": ["zeta.exe"], "Alpha AV": ["alpha.exe"], "Other": ["other.exe"]}
    assert identify_av(report, sigs) == "Alpha AV"
    assert identify_av(report, {"Other": ["other.exe"]}) is None


def test_identify_av_prefers_larger_overlap():
    report = SuiteReport((ProbeFinding("proc_names", True, ("b1.exe", "b2.exe", "a1.exe")),), {}, frozenset())
    assert identify_av(report, {"A": ["a1.exe"], "B": ["b1.exe", "b2.exe"]}) == "B"


def test_fingerprints_cover_av_fixtures():
    fp = load_fingerprints()
    assert set(fp) == {name for name, _, _ in AV_COUNTS.values()}


# properties

host_strategy = st.fixed_dictionaries(
    {
        "processes": st.lists(
            st.sampled_from(["ollydbg.exe", "vmtoolsd.exe", "avp.exe", "notepad.exe", "VBoxTray.exe"]),
            max_size=5,
        ),
        "windows": st.lists(st.sampled_from(["OLLYDBG", "Notepad", "x64dbg - main"]), max_size=3),
        "folders": st.lists(
            st.sampled_from(
                [
                    "C:\\Program Files\\VMware\\VMware Tools",
                    "C:\\Program Files\\Avast Software",
                    "C:\\Windows\\System32\\vboxhook.dll",
                    "C:\\Users\\bob",
                ]
            ),
            max_size=4,
        ),
        "users": st.lists(st.sampled_from(["sandbox", "bob", "malware"]), max_size=2),
        "macs": st.lists(st.sampled_from(["08:00:27:01:02:03", "3c:52:82:01:02:03", "00:50:56:aa:bb:cc"]), max_size=2),
        "modules": st.lists(st.sampled_from(["sbiedll.dll", "dbghelp.dll", "kernel32.dll"]), max_size=3),
        "dbg": st.booleans(),
        "regs": st.lists(st.integers(0, 3), min_size=4, max_size=4),
        "trace": st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=3),
    }
)


def build_host(h) -> dict:
    return {
        "processes": [{"name": n, "pid": 4 * (i + 1)} for i, n in enumerate(h["processes"])],
        "windows": h["windows"],
        "folders": h["folders"],
        "registry": {},
        "modules": [{"name": m, "exports": []} for m in h["modules"]],
        "users": h["users"],
        "nics": [{"mac": m} for m in h["macs"]],
        "debugger": {"being_debugged": h["dbg"], "hw_registers": h["regs"]},
        "cursor_trace": [list(p) for p in h["trace"]],
    }


def _artifact_backed(snap, probe_id: str, artifact: str) -> bool:
    low = artifact.lower()
    if probe_id == "proc_names":
        return any(p.name == artifact for p in snap.processes)
    if probe_id == "window_names":
        return any(low in w.lower() for w in snap.windows)
    if probe_id == "folder_names" or probe_id == "dll_names":
        return any(f.lower().startswith(low) for f in snap.folders)
    if probe_id == "module_exports":
        return any(m.name.lower() == low for m in snap.modules)
    if probe_id == "usernames":
        return artifact in snap.users
    if probe_id == "mac_prefixes":
        return any(":".join(f"{b:02x}" for b in m) == artifact for m in snap.nics)
    if probe_id == "debugger_flag":
        return snap.debugger.being_debugged
    if probe_id == "hw_debug_registers":
        return snap.debugger.hw_registers[int(artifact[2])] != 0
    if probe_id == "cursor_static":
        trace = snap.cursor_trace
        return trace[0] == trace[min(1, len(trace) - 1)]
    return False


@settings(max_examples=150, deadline=None)
@given(host_strategy)
def test_soundness(h):
    snap = load_snapshot(build_host(h))
    report = run_suite(bind_api(snap), WatchlistSet.default())
    for f in report.findings:
        assert f.detected == bool(f.artifacts)
        for artifact in f.artifacts:
            assert _artifact_backed(snap, f.probe_id, artifact), (f.probe_id, artifact)


@settings(max_examples=150, deadline=None)
@given(host_strategy, host_strategy)
def test_monotonic_under_added_entries(h, extra):
    base = build_host(h)
    grown = copy.deepcopy(base)
    more = build_host(extra)
    offset = 4 * (len(base["processes"]) + 1)
    grown["processes"] += [{"name": p["name"], "pid": p["pid"] + offset * 4} for p in more["processes"]]
    for key in ("windows", "folders", "users", "nics", "modules"):
        grown[key] += more[key]
    wl = WatchlistSet.default()
    before = run_suite(bind_api(load_snapshot(base)), wl)
    after = run_suite(bind_api(load_snapshot(grown)), wl)
    for b, a in zip(before.findings, after.findings):
        if b.detected:
            assert a.detected, b.probe_id

from __future__ import annotations

import copy
import sys

import pytest

from evasionkit.corpus import build_corpus, write_corpus
from evasionkit.pe import PeSpec, build_pe
from evasionkit.probes import WatchlistSet
from evasionkit.rulelang import compile_rules, load_default_ruleset

EMPTY_HOST = {
    "processes": [],
    "windows": [],
    "folders": [],
    "registry": {},
    "modules": [],
    "users": [],
    "nics": [],
    "debugger": {"being_debugged": False, "hw_registers": [0, 0, 0, 0]},
    "cursor_trace": [[10, 10]],
}


@pytest.fixture
def empty_host_doc():
    """The minimal document: nothing on the host, a single-point cursor trace."""
    return copy.deepcopy(EMPTY_HOST)


@pytest.fixture
def quiet_host_doc():
    """No artifacts at all: like the minimal document but with a moving cursor.

    A single-point trace repeats forever, which the cursor probe rightly
    reads as a static cursor.
    """
    doc = copy.deepcopy(EMPTY_HOST)
    doc["cursor_trace"] = [[10, 10], [12, 11]]
    return doc


@pytest.fixture(scope="session")
def default_crs():
    return compile_rules(load_default_ruleset())


@pytest.fixture(scope="session")
def watchlists():
    return WatchlistSet.default()


@pytest.fixture(scope="session")
def corpus():
    return build_corpus()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, corpus):
    out = tmp_path_factory.mktemp("corpus")
    write_corpus(out, corpus)
    return out


@pytest.fixture(scope="session")
def minimal_pe():
    """Smallest useful fixture: one import, no certificate."""
    return build_pe(PeSpec(text=b"\x55\x8b\xec\x5d\xc3", imports=[("kernel32.dll", ["IsDebuggerPresent"])]))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(module.RESULTS):
            terminalreporter.write_line(module.RESULTS[n])

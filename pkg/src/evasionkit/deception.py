"""Deception countermeasure: fake analysis artifacts behind the API surface.

Eight functions are intercepted, with three kinds of instrumentation:

* fixed returns for ``is_debugger_present`` and ``get_cursor_pos``;
* name-gated fakes for ``get_module_handle``, ``reg_open_key``,
  ``reg_query_value``, ``create_file`` and ``get_file_attributes``: when the
  queried name contains a watchlisted tool name the call succeeds with a fake
  handle or value, otherwise the truthful answer is returned unchanged;
* ``snapshot_processes`` reports extra analysis-tool processes unless a
  process with that name is already running.

Everything else is forwarded untouched. :func:`diff_run` runs the probe suite
with and without the layer and reports which probes changed their mind.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .envmodel import (
    API_FUNCTIONS,
    FILE_ATTRIBUTE_DIRECTORY,
    SUCCESS,
    ApiResult,
    ApiSurface,
    EnvironmentSnapshot,
    Process,
    SchemaError,
    bind_api,
    normalize_key,
)
from .probes import (
    ALL_CATEGORIES,
    ProbeFinding,
    WatchlistSet,
    probe_catalog,
    read_watchlist,
    run_suite,
)

FIXED_RETURN_FUNCTIONS = ("is_debugger_present", "get_cursor_pos")
NAME_GATED_FUNCTIONS = (
    "get_module_handle",
    "reg_open_key",
    "reg_query_value",
    "create_file",
    "get_file_attributes",
)
PROCESS_INJECTION_FUNCTIONS = ("snapshot_processes",)
HOOKED_FUNCTIONS = frozenset(FIXED_RETURN_FUNCTIONS + NAME_GATED_FUNCTIONS + PROCESS_INJECTION_FUNCTIONS)
PASSTHROUGH_FUNCTIONS = frozenset(API_FUNCTIONS) - HOOKED_FUNCTIONS


class InvalidSurface(TypeError):
    pass


def _data_text(*parts: str) -> str:
    return resources.files("evasionkit.data").joinpath(*parts).read_text("utf-8")


def default_name_watchlist() -> tuple[str, ...]:
    return read_watchlist(_data_text("deception_names.txt"))


def default_fake_processes() -> tuple[str, ...]:
    return read_watchlist(_data_text("fake_processes.txt"))


@dataclass(frozen=True)
class FixedReturns:
    """``None`` for a field means the call is intercepted but answered truthfully."""

    being_debugged: bool | None = True
    cursor: tuple[int, int] | None = (0, 0)


@dataclass(frozen=True)
class DeceptionPolicy:
    fixed: FixedReturns = FixedReturns()
    name_watchlist: tuple[str, ...] = field(default_factory=default_name_watchlist)
    fake_values: Mapping[tuple[str, str], Any] = field(default_factory=dict)
    fake_processes: tuple[str, ...] = field(default_factory=default_fake_processes)

    def __post_init__(self):
        if any(not isinstance(n, str) or not n for n in self.name_watchlist):
            raise ValueError("watchlist entries must be non-empty strings")
        normalized = {(normalize_key(p), n.lower()): v for (p, n), v in self.fake_values.items()}
        object.__setattr__(self, "fake_values", normalized)
        object.__setattr__(self, "_needles", tuple(n.lower() for n in self.name_watchlist))

    def gates(self, *names: str) -> bool:
        """True when any of ``names`` contains a watchlisted tool name."""
        return any(needle in name.lower() for name in names for needle in self._needles)

    def to_dict(self) -> dict:
        return {
            "fixed": {
                "being_debugged": self.fixed.being_debugged,
                "cursor": list(self.fixed.cursor) if self.fixed.cursor is not None else None,
            },
            "watchlist": list(self.name_watchlist),
            "fake_values": {f"{p}|{n}": v for (p, n), v in self.fake_values.items()},
            "fake_processes": list(self.fake_processes),
        }


def _string_list(value, path: str) -> tuple[str, ...]:
    if not isinstance(value, list):
        raise SchemaError(path, "expected a list")
    for i, item in enumerate(value):
        if not isinstance(item, str) or not item:
            raise SchemaError(f"{path}[{i}]", "expected a non-empty string")
    return tuple(value)


def policy_from_dict(doc: Any) -> DeceptionPolicy:
    if not isinstance(doc, dict):
        raise SchemaError("", "expected a JSON object")
    unknown = set(doc) - {"fixed", "watchlist", "fake_values", "fake_processes"}
    if unknown:
        raise SchemaError(sorted(unknown)[0], "unknown field")
    kwargs: dict[str, Any] = {}

    fixed_doc = doc.get("fixed", {})
    if not isinstance(fixed_doc, dict):
        raise SchemaError("fixed", "expected an object")
    unknown = set(fixed_doc) - {"being_debugged", "cursor"}
    if unknown:
        raise SchemaError(f"fixed.{sorted(unknown)[0]}", "unknown field")
    defaults = FixedReturns()
    being_debugged = fixed_doc.get("being_debugged", defaults.being_debugged)
    if being_debugged is not None and not isinstance(being_debugged, bool):
        raise SchemaError("fixed.being_debugged", "expected a boolean or null")
    cursor = fixed_doc.get("cursor", defaults.cursor)
    if cursor is not None:
        if (
            not isinstance(cursor, (list, tuple))
            or len(cursor) != 2
            or not all(isinstance(c, int) and not isinstance(c, bool) for c in cursor)
        ):
            raise SchemaError("fixed.cursor", "expected [x, y] integers or null")
        cursor = (cursor[0], cursor[1])
    kwargs["fixed"] = FixedReturns(being_debugged, cursor)

    if "watchlist" in doc:
        kwargs["name_watchlist"] = _string_list(doc["watchlist"], "watchlist")
    if "fake_processes" in doc:
        kwargs["fake_processes"] = _string_list(doc["fake_processes"], "fake_processes")
    if "fake_values" in doc:
        values = doc["fake_values"]
        if not isinstance(values, dict):
            raise SchemaError("fake_values", "expected an object")
        parsed = {}
        for key, value in values.items():
            path, sep, name = key.partition("|")
            if not sep or not path:
                raise SchemaError(f"fake_values[{key!r}]", "expected a 'path|name' key")
            if not isinstance(value, (str, int)) or isinstance(value, bool):
                raise SchemaError(f"fake_values[{key!r}]", "expected a string or integer")
            parsed[(path, name)] = value
        kwargs["fake_values"] = parsed
    return DeceptionPolicy(**kwargs)


def load_policy(doc: str | bytes | dict) -> DeceptionPolicy:
    if isinstance(doc, (str, bytes)):
        text = doc.decode("utf-8") if isinstance(doc, bytes) else doc
        try:
            doc = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise SchemaError("", f"invalid JSON: {exc}") from None
    return policy_from_dict(doc)


def load_policy_file(path: str | Path) -> DeceptionPolicy:
    return load_policy(Path(path).read_text(encoding="utf-8"))


def load_shipped_policy(name: str = "default") -> DeceptionPolicy:
    if not name.endswith(".policy.json"):
        name += ".policy.json"
    return load_policy(_data_text("policies", name))


def fake_handle(kind: str, name: str) -> int:
    return 0xF0000000 | (zlib.crc32(f"fake:{kind}:{name.lower()}".encode("utf-8")) & 0x0FFFFFF0)


@dataclass(frozen=True)
class InterceptionStats:
    intercepted: int
    passthrough: int
    faked: int = 0

    def to_dict(self) -> dict:
        return {"intercepted": self.intercepted, "passthrough": self.passthrough, "faked": self.faked}


class DeceivedApi(ApiSurface):
    def __init__(self, policy: DeceptionPolicy, inner: ApiSurface):
        super().__init__()
        self.policy = policy
        self.inner = inner
        self.intercepted = 0
        self.passthrough = 0
        self.faked = 0

    # type 1: fixed returns

    def _is_debugger_present(self):
        self.intercepted += 1
        if self.policy.fixed.being_debugged is None:
            return self.inner.is_debugger_present()
        self.faked += 1
        return self.policy.fixed.being_debugged

    def _get_cursor_pos(self):
        self.intercepted += 1
        if self.policy.fixed.cursor is None:
            return self.inner.get_cursor_pos()
        self.faked += 1
        return self.policy.fixed.cursor

    # type 2: name-gated fakes

    def _gated(self, *names: str) -> bool:
        self.intercepted += 1
        if self.policy.gates(*names):
            self.faked += 1
            return True
        return False

    def _get_module_handle(self, name):
        if self._gated(name):
            return ApiResult(SUCCESS, fake_handle("module", name))
        return self.inner.get_module_handle(name)

    def _reg_open_key(self, path):
        if self._gated(path):
            return ApiResult(SUCCESS, fake_handle("key", normalize_key(path)))
        return self.inner.reg_open_key(path)

    def _reg_query_value(self, path, name):
        if self._gated(path, name):
            value = self.policy.fake_values.get((normalize_key(path), name.lower()), name)
            return ApiResult(SUCCESS, value)
        return self.inner.reg_query_value(path, name)

    def _create_file(self, path):
        if self._gated(path):
            return ApiResult(SUCCESS, fake_handle("file", path))
        return self.inner.create_file(path)

    def _get_file_attributes(self, path):
        if self._gated(path):
            return ApiResult(SUCCESS, FILE_ATTRIBUTE_DIRECTORY)
        return self.inner.get_file_attributes(path)

    # type 3: process injection

    def _snapshot_processes(self):
        self.intercepted += 1
        procs = tuple(self.inner.snapshot_processes())
        running = {p.name.lower() for p in procs}
        next_pid = max((p.pid for p in procs), default=0)
        extra = []
        for name in self.policy.fake_processes:
            if name.lower() in running:
                continue
            running.add(name.lower())
            next_pid += 4
            extra.append(Process(name, next_pid))
        if extra:
            self.faked += 1
        return procs + tuple(extra)

    # forwarded untouched

    def _forward(self, name: str, *args):
        self.passthrough += 1
        return getattr(self.inner, name)(*args)

    def _find_window(self, title):
        return self._forward("find_window", title)

    def _get_thread_context(self):
        return self._forward("get_thread_context")

    def _get_proc_address(self, module, name):
        return self._forward("get_proc_address", module, name)

    def _get_username(self):
        return self._forward("get_username")

    def _get_adapters(self):
        return self._forward("get_adapters")


def apply(policy: DeceptionPolicy, api: ApiSurface) -> DeceivedApi:
    return DeceivedApi(policy, api)


def interception_stats(api: ApiSurface) -> InterceptionStats:
    if not isinstance(api, DeceivedApi):
        raise InvalidSurface("interception statistics need a surface produced by apply()")
    return InterceptionStats(api.intercepted, api.passthrough, api.faked)


class Verdict(str, Enum):
    FORCED_EVASION = "FORCED_EVASION"
    NO_CHANGE = "NO_CHANGE"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class ProbeDiff:
    probe_id: str
    before: ProbeFinding
    after: ProbeFinding

    @property
    def flipped(self) -> bool:
        return self.before.detected != self.after.detected

    def to_dict(self) -> dict:
        return {
            "probe": self.probe_id,
            "before": self.before.detected,
            "after": self.after.detected,
            "flipped": self.flipped,
            "before_artifacts": list(self.before.artifacts),
            "after_artifacts": list(self.after.artifacts),
        }


def uncovered_probes() -> tuple[str, ...]:
    """Probes that call at least one function the layer does not intercept."""
    return tuple(p.id for p in probe_catalog() if not set(p.api_plan) <= HOOKED_FUNCTIONS)


@dataclass(frozen=True)
class ForcedEvasionReport:
    probes: tuple[ProbeDiff, ...]
    stats: InterceptionStats

    @property
    def flipped(self) -> tuple[str, ...]:
        return tuple(d.probe_id for d in self.probes if d.flipped)

    @property
    def flip_count(self) -> int:
        return len(self.flipped)

    @property
    def verdict(self) -> Verdict:
        return Verdict.FORCED_EVASION if self.flip_count >= 1 else Verdict.NO_CHANGE

    def to_dict(self) -> dict:
        return {
            "probes": [d.to_dict() for d in self.probes],
            "flipped": list(self.flipped),
            "flip_count": self.flip_count,
            "verdict": self.verdict.value,
            "uncovered_probes": list(uncovered_probes()),
            "interception": self.stats.to_dict(),
        }


def diff_run(
    snapshot: EnvironmentSnapshot,
    policy: DeceptionPolicy,
    watchlists: WatchlistSet | None = None,
) -> ForcedEvasionReport:
    watchlists = watchlists or WatchlistSet.default()
    before = run_suite(bind_api(snapshot), watchlists, ALL_CATEGORIES, fingerprints={})
    wrapped = apply(policy, bind_api(snapshot))
    after = run_suite(wrapped, watchlists, ALL_CATEGORIES, fingerprints={})
    diffs = tuple(
        ProbeDiff(b.probe_id, b, a) for b, a in zip(before.findings, after.findings)
    )
    return ForcedEvasionReport(diffs, interception_stats(wrapped))

"""Declarative host snapshots and the call-counted API surface over them.

A snapshot lists what an evasion probe could observe on a host: running
processes, window titles, filesystem entries, the registry, loaded modules,
users, NIC addresses, debugger state and a cursor trace. :func:`bind_api`
exposes it through the same small set of functions a probe would call on a
real system, answering every query from the snapshot and nothing else.
"""

from __future__ import annotations

import json
import re
import zlib
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping, NamedTuple

SUCCESS = 0
NOT_FOUND = 2
ACCESS_DENIED = 5

NULL_HANDLE = 0
INVALID_HANDLE_VALUE = -1
FILE_ATTRIBUTE_DIRECTORY = 0x10
INVALID_FILE_ATTRIBUTES = 0xFFFFFFFF

API_FUNCTIONS = (
    "snapshot_processes",
    "find_window",
    "is_debugger_present",
    "get_thread_context",
    "get_cursor_pos",
    "get_module_handle",
    "get_proc_address",
    "reg_open_key",
    "reg_query_value",
    "create_file",
    "get_file_attributes",
    "get_username",
    "get_adapters",
)

SNAPSHOT_KEYS = (
    "processes",
    "windows",
    "folders",
    "registry",
    "modules",
    "users",
    "nics",
    "debugger",
    "cursor_trace",
)

_HIVES = {
    "hkey_local_machine": "hklm",
    "hkey_current_user": "hkcu",
    "hkey_classes_root": "hkcr",
    "hkey_users": "hku",
    "hkey_current_config": "hkcc",
}


class SchemaError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


class ApiResult(NamedTuple):
    status: int
    value: Any


@dataclass(frozen=True)
class Process:
    name: str
    pid: int


@dataclass(frozen=True)
class Module:
    name: str
    exports: tuple[str, ...] = ()


@dataclass(frozen=True)
class DebuggerState:
    being_debugged: bool = False
    hw_registers: tuple[int, int, int, int] = (0, 0, 0, 0)


def format_mac(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


def parse_mac(text: str) -> bytes:
    parts = re.split(r"[:-]", text.strip())
    if not all(re.fullmatch(r"[0-9A-Fa-f]{2}", p) for p in parts):
        raise ValueError(f"bad MAC address {text!r}")
    return bytes(int(p, 16) for p in parts)


def normalize_path(path: str) -> str:
    return path.replace("/", "\\").rstrip("\\").lower()


def normalize_key(path: str) -> str:
    norm = normalize_path(path)
    hive, sep, rest = norm.partition("\\")
    return _HIVES.get(hive, hive) + sep + rest


def _ancestors(norm: str) -> list[str]:
    parts = norm.split("\\")
    return ["\\".join(parts[:i]) for i in range(1, len(parts) + 1)]


def handle_for(kind: str, name: str) -> int:
    """Stable pseudo-handle derived from the object's normalized name."""
    return 0x10000 | (zlib.crc32(f"{kind}:{name}".encode("utf-8")) & 0xFFFFFFF0)


@dataclass(frozen=True)
class EnvironmentSnapshot:
    processes: tuple[Process, ...] = ()
    windows: tuple[str, ...] = ()
    folders: frozenset[str] = frozenset()
    registry: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    modules: tuple[Module, ...] = ()
    users: tuple[str, ...] = ()
    nics: tuple[bytes, ...] = ()
    debugger: DebuggerState = DebuggerState()
    cursor_trace: tuple[tuple[int, int], ...] = ((0, 0),)

    def __post_init__(self):
        pids = [p.pid for p in self.processes]
        if any(pid <= 0 for pid in pids) or len(set(pids)) != len(pids):
            raise SchemaError("processes", "pids must be unique and positive")
        if any(len(mac) != 6 for mac in self.nics):
            raise SchemaError("nics", "MAC addresses must be exactly 6 bytes")
        if not self.cursor_trace:
            raise SchemaError("cursor_trace", "must not be empty")
        if len(self.debugger.hw_registers) != 4:
            raise SchemaError("debugger.hw_registers", "expected 4 values")
        frozen = {k: MappingProxyType(dict(v)) for k, v in self.registry.items()}
        object.__setattr__(self, "registry", MappingProxyType(frozen))
        object.__setattr__(self, "folders", frozenset(self.folders))

    def to_dict(self) -> dict:
        return {
            "processes": [{"name": p.name, "pid": p.pid} for p in self.processes],
            "windows": list(self.windows),
            "folders": sorted(self.folders),
            "registry": {k: dict(v) for k, v in self.registry.items()},
            "modules": [{"name": m.name, "exports": list(m.exports)} for m in self.modules],
            "users": list(self.users),
            "nics": [{"mac": format_mac(mac)} for mac in self.nics],
            "debugger": {
                "being_debugged": self.debugger.being_debugged,
                "hw_registers": list(self.debugger.hw_registers),
            },
            "cursor_trace": [list(p) for p in self.cursor_trace],
        }


# -- loading ---------------------------------------------------------------


def _expect(value, types, path: str, what: str):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise SchemaError(path, f"expected {what}")
    if not isinstance(value, types):
        raise SchemaError(path, f"expected {what}")
    return value


def _keys(obj: dict, required: set[str], path: str) -> None:
    extra = set(obj) - required
    if extra:
        raise SchemaError(f"{path}.{sorted(extra)[0]}".lstrip("."), "unknown field")
    missing = required - set(obj)
    if missing:
        raise SchemaError(f"{path}.{sorted(missing)[0]}".lstrip("."), "missing field")


def _str_list(value, path: str) -> list[str]:
    _expect(value, list, path, "a list")
    return [_expect(v, str, f"{path}[{i}]", "a string") for i, v in enumerate(value)]


_ABSOLUTE = re.compile(r"^([A-Za-z]:[\\/]|\\\\)")


def snapshot_from_dict(doc: Any) -> EnvironmentSnapshot:
    _expect(doc, dict, "", "a JSON object")
    _keys(doc, set(SNAPSHOT_KEYS), "")

    processes = []
    for i, entry in enumerate(_expect(doc["processes"], list, "processes", "a list")):
        path = f"processes[{i}]"
        _expect(entry, dict, path, "an object")
        _keys(entry, {"name", "pid"}, path)
        name = _expect(entry["name"], str, f"{path}.name", "a string")
        pid = _expect(entry["pid"], int, f"{path}.pid", "an integer")
        if pid <= 0:
            raise SchemaError(f"{path}.pid", "must be positive")
        processes.append(Process(name, pid))
    if len({p.pid for p in processes}) != len(processes):
        raise SchemaError("processes", "duplicate pid")

    windows = _str_list(doc["windows"], "windows")
    folders = _str_list(doc["folders"], "folders")
    for i, f in enumerate(folders):
        if not _ABSOLUTE.match(f):
            raise SchemaError(f"folders[{i}]", "expected an absolute path")

    registry: dict[str, dict[str, Any]] = {}
    _expect(doc["registry"], dict, "registry", "an object")
    for key, values in doc["registry"].items():
        path = f"registry[{key!r}]"
        _expect(values, dict, path, "an object")
        for vname, value in values.items():
            if not isinstance(value, (str, int)) or isinstance(value, bool):
                raise SchemaError(f"{path}[{vname!r}]", "expected a string or integer")
        registry[key] = dict(values)

    modules = []
    for i, entry in enumerate(_expect(doc["modules"], list, "modules", "a list")):
        path = f"modules[{i}]"
        _expect(entry, dict, path, "an object")
        _keys(entry, {"name", "exports"}, path)
        name = _expect(entry["name"], str, f"{path}.name", "a string")
        modules.append(Module(name, tuple(_str_list(entry["exports"], f"{path}.exports"))))

    users = _str_list(doc["users"], "users")

    nics = []
    for i, entry in enumerate(_expect(doc["nics"], list, "nics", "a list")):
        path = f"nics[{i}]"
        _expect(entry, dict, path, "an object")
        _keys(entry, {"mac"}, path)
        text = _expect(entry["mac"], str, f"{path}.mac", "a string")
        try:
            mac = parse_mac(text)
        except ValueError as exc:
            raise SchemaError(f"{path}.mac", str(exc)) from None
        if len(mac) != 6:
            raise SchemaError(f"{path}.mac", f"expected 6 bytes, got {len(mac)}")
        nics.append(mac)

    dbg = _expect(doc["debugger"], dict, "debugger", "an object")
    _keys(dbg, {"being_debugged", "hw_registers"}, "debugger")
    being_debugged = _expect(dbg["being_debugged"], bool, "debugger.being_debugged", "a boolean")
    regs = _expect(dbg["hw_registers"], list, "debugger.hw_registers", "a list")
    if len(regs) != 4:
        raise SchemaError("debugger.hw_registers", "expected exactly 4 values")
    for i, r in enumerate(regs):
        _expect(r, int, f"debugger.hw_registers[{i}]", "an integer")
        if r < 0:
            raise SchemaError(f"debugger.hw_registers[{i}]", "must be non-negative")

    trace = _expect(doc["cursor_trace"], list, "cursor_trace", "a list")
    if not trace:
        raise SchemaError("cursor_trace", "must not be empty")
    points = []
    for i, pt in enumerate(trace):
        path = f"cursor_trace[{i}]"
        _expect(pt, list, path, "an [x, y] pair")
        if len(pt) != 2:
            raise SchemaError(path, "expected an [x, y] pair")
        x, y = (_expect(v, int, path, "integer coordinates") for v in pt)
        points.append((x, y))

    return EnvironmentSnapshot(
        processes=tuple(processes),
        windows=tuple(windows),
        folders=frozenset(folders),
        registry=registry,
        modules=tuple(modules),
        users=tuple(users),
        nics=tuple(nics),
        debugger=DebuggerState(being_debugged, tuple(regs)),
        cursor_trace=tuple(points),
    )


def load_snapshot(doc: str | bytes | dict) -> EnvironmentSnapshot:
    """Load a snapshot from JSON text or an already-decoded document."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaError("", f"invalid JSON: {exc}") from None
    return snapshot_from_dict(doc)


def load_snapshot_file(path: str | Path) -> EnvironmentSnapshot:
    return load_snapshot(Path(path).read_text(encoding="utf-8"))


def shipped_environments() -> list[str]:
    root = resources.files("evasionkit.data").joinpath("env")
    return sorted(p.name[: -len(".env.json")] for p in root.iterdir() if p.name.endswith(".env.json"))


def load_shipped_snapshot(name: str) -> EnvironmentSnapshot:
    if not name.endswith(".env.json"):
        name += ".env.json"
    text = resources.files("evasionkit.data").joinpath("env", name).read_text("utf-8")
    return load_snapshot(text)


# -- API surface -------------------------------------------------------------


class ApiSurface:
    """Base for anything that answers the modeled API calls.

    Subclasses implement the ``_``-prefixed handlers; the public methods
    count each invocation in ``call_log`` before dispatching.
    """

    def __init__(self) -> None:
        self.call_log: Counter[str] = Counter({name: 0 for name in API_FUNCTIONS})

    def _count(self, name: str) -> None:
        self.call_log[name] += 1

    def snapshot_processes(self) -> tuple[Process, ...]:
        self._count("snapshot_processes")
        return self._snapshot_processes()

    def find_window(self, title: str) -> int:
        self._count("find_window")
        return self._find_window(title)

    def is_debugger_present(self) -> bool:
        self._count("is_debugger_present")
        return self._is_debugger_present()

    def get_thread_context(self) -> tuple[int, int, int, int]:
        self._count("get_thread_context")
        return self._get_thread_context()

    def get_cursor_pos(self) -> tuple[int, int]:
        self._count("get_cursor_pos")
        return self._get_cursor_pos()

    def get_module_handle(self, name: str) -> ApiResult:
        self._count("get_module_handle")
        return self._get_module_handle(name)

    def get_proc_address(self, module: str, name: str) -> ApiResult:
        self._count("get_proc_address")
        return self._get_proc_address(module, name)

    def reg_open_key(self, path: str) -> ApiResult:
        self._count("reg_open_key")
        return self._reg_open_key(path)

    def reg_query_value(self, path: str, name: str) -> ApiResult:
        self._count("reg_query_value")
        return self._reg_query_value(path, name)

    def create_file(self, path: str) -> ApiResult:
        self._count("create_file")
        return self._create_file(path)

    def get_file_attributes(self, path: str) -> ApiResult:
        self._count("get_file_attributes")
        return self._get_file_attributes(path)

    def get_username(self) -> str:
        self._count("get_username")
        return self._get_username()

    def get_adapters(self) -> tuple[bytes, ...]:
        self._count("get_adapters")
        return self._get_adapters()


def _module_key(name: str) -> str:
    norm = name.lower()
    return norm if "." in norm.rsplit("\\", 1)[-1] else norm + ".dll"


class SnapshotApi(ApiSurface):
    """Truthful binding: every answer is read from the snapshot."""

    def __init__(self, snapshot: EnvironmentSnapshot):
        super().__init__()
        self.snapshot = snapshot
        self._cursor_index = 0
        self._paths: set[str] = set()
        for f in snapshot.folders:
            self._paths.update(_ancestors(normalize_path(f)))
        self._keys: set[str] = set()
        self._values: dict[str, dict[str, Any]] = {}
        for key, values in snapshot.registry.items():
            norm = normalize_key(key)
            self._keys.update(_ancestors(norm))
            bucket = self._values.setdefault(norm, {})
            for vname, value in values.items():
                bucket[vname.lower()] = value
        self._modules = {_module_key(m.name): m for m in snapshot.modules}

    def _snapshot_processes(self):
        return self.snapshot.processes

    def _find_window(self, title):
        needle = title.lower()
        if not needle:
            return NULL_HANDLE
        for window in self.snapshot.windows:
            if needle in window.lower():
                return handle_for("window", window.lower())
        return NULL_HANDLE

    def _is_debugger_present(self):
        return self.snapshot.debugger.being_debugged

    def _get_thread_context(self):
        return tuple(self.snapshot.debugger.hw_registers)

    def _get_cursor_pos(self):
        trace = self.snapshot.cursor_trace
        pos = trace[min(self._cursor_index, len(trace) - 1)]
        self._cursor_index += 1
        return pos

    def _get_module_handle(self, name):
        key = _module_key(name)
        if key in self._modules:
            return ApiResult(SUCCESS, handle_for("module", key))
        return ApiResult(NOT_FOUND, NULL_HANDLE)

    def _get_proc_address(self, module, name):
        mod = self._modules.get(_module_key(module))
        if mod is not None and name in mod.exports:
            return ApiResult(SUCCESS, handle_for("proc", f"{mod.name.lower()}!{name}"))
        return ApiResult(NOT_FOUND, NULL_HANDLE)

    def _reg_open_key(self, path):
        norm = normalize_key(path)
        if norm in self._keys:
            return ApiResult(SUCCESS, handle_for("key", norm))
        return ApiResult(NOT_FOUND, NULL_HANDLE)

    def _reg_query_value(self, path, name):
        values = self._values.get(normalize_key(path))
        if values is not None and name.lower() in values:
            return ApiResult(SUCCESS, values[name.lower()])
        return ApiResult(NOT_FOUND, None)

    def _create_file(self, path):
        norm = normalize_path(path)
        if norm in self._paths:
            return ApiResult(SUCCESS, handle_for("file", norm))
        return ApiResult(NOT_FOUND, INVALID_HANDLE_VALUE)

    def _get_file_attributes(self, path):
        if normalize_path(path) in self._paths:
            return ApiResult(SUCCESS, FILE_ATTRIBUTE_DIRECTORY)
        return ApiResult(NOT_FOUND, INVALID_FILE_ATTRIBUTES)

    def _get_username(self):
        return self.snapshot.users[0] if self.snapshot.users else ""

    def _get_adapters(self):
        return self.snapshot.nics


def bind_api(snapshot: EnvironmentSnapshot) -> SnapshotApi:
    return SnapshotApi(snapshot)


def call_counts(api: ApiSurface) -> dict[str, int]:
    return {name: api.call_log[name] for name in API_FUNCTIONS}

"""Overhead measurement for the deception layer on synthetic workloads.

Both workloads drive the modeled API surface, once through the deception
wrapper and once bare. Runs are interleaved (on, off, on, off, ...) so that
drift in machine load hits both arms alike.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Callable

from .deception import DeceptionPolicy, apply, interception_stats, load_shipped_policy
from .envmodel import ApiSurface, EnvironmentSnapshot, bind_api, load_shipped_snapshot
from .probes import WatchlistSet, run_suite

WORKLOADS = ("probe-heavy", "api-light")
DEFAULT_ITERATIONS = 100

# suite passes per timed run; keeps each sample well above timer resolution
SUITE_PASSES = 5
LIGHT_ROUNDS = 200

# calls that never touch a watchlist entry, so no gated fake can fire
_LIGHT_MIX: tuple[tuple[str, tuple], ...] = (
    ("get_module_handle", ("kernel32.dll",)),
    ("get_module_handle", ("user32",)),
    ("get_proc_address", ("kernel32.dll", "GetProcAddress")),
    ("get_file_attributes", ("C:\\Windows\\System32",)),
    ("create_file", ("C:\\Windows\\win.ini",)),
    ("reg_open_key", ("HKLM\\SOFTWARE\\Microsoft\\Windows\\CurrentVersion",)),
    ("reg_query_value", ("HKLM\\SOFTWARE\\Microsoft\\Windows\\CurrentVersion", "ProgramFilesDir")),
    ("find_window", ("Untitled - Notepad",)),
    ("get_username", ()),
    ("get_adapters", ()),
)


@dataclass(frozen=True)
class BenchRow:
    workload: str
    enabled: bool
    mean: float
    std: float
    runs: int

    def to_dict(self) -> dict:
        return {
            "workload": self.workload,
            "enabled": self.enabled,
            "mean_seconds": self.mean,
            "std_seconds": self.std,
            "runs": self.runs,
        }


@dataclass(frozen=True)
class BenchReport:
    workload: str
    on: BenchRow
    off: BenchRow
    faked: int

    @property
    def overhead_pct(self) -> float:
        return (self.on.mean - self.off.mean) / self.off.mean * 100.0

    def to_dict(self) -> dict:
        return {
            "workload": self.workload,
            "rows": [self.on.to_dict(), self.off.to_dict()],
            "overhead_pct": self.overhead_pct,
            "faked": self.faked,
        }

    def render(self) -> str:
        """Two lines per workload (countermeasure on, then off) and the overhead."""
        lines = [
            f"{'Workload':<14}{'Deception':<11}{'Mean (s)':>12}{'Std (s)':>12}{'Runs':>6}",
            _row(self.workload, self.on),
            _row("", self.off),
            f"Overhead: {self.overhead_pct:+.2f}%",
        ]
        return "\n".join(lines)


def _row(label: str, row: BenchRow) -> str:
    state = "on" if row.enabled else "off"
    return f"{label:<14}{state:<11}{row.mean:>12.6f}{row.std:>12.6f}{row.runs:>6}"


def _probe_heavy(watchlists: WatchlistSet) -> Callable[[ApiSurface], None]:
    def run(api: ApiSurface) -> None:
        for _ in range(SUITE_PASSES):
            run_suite(api, watchlists, fingerprints={})

    return run


def _api_light(api: ApiSurface) -> None:
    for _ in range(LIGHT_ROUNDS):
        for name, args in _LIGHT_MIX:
            getattr(api, name)(*args)


def run_bench(
    iterations: int = DEFAULT_ITERATIONS,
    workload: str = "probe-heavy",
    snapshot: EnvironmentSnapshot | None = None,
    policy: DeceptionPolicy | None = None,
    watchlists: WatchlistSet | None = None,
) -> BenchReport:
    if iterations < 2:
        raise ValueError("iterations must be at least 2 for a standard deviation")
    if workload not in WORKLOADS:
        raise ValueError(f"unknown workload {workload!r}")
    snapshot = snapshot or load_shipped_snapshot("clean")
    policy = policy or load_shipped_policy("default")
    watchlists = watchlists or WatchlistSet.default()
    body = _probe_heavy(watchlists) if workload == "probe-heavy" else _api_light

    def timed(api: ApiSurface) -> float:
        start = time.perf_counter()
        body(api)
        return time.perf_counter() - start

    # one untimed pass per arm warms caches and lazy loads
    body(apply(policy, bind_api(snapshot)))
    body(bind_api(snapshot))

    on_times, off_times, faked = [], [], 0
    for _ in range(iterations):
        wrapped = apply(policy, bind_api(snapshot))
        on_times.append(timed(wrapped))
        faked += interception_stats(wrapped).faked
        off_times.append(timed(bind_api(snapshot)))

    def row(times: list[float], enabled: bool) -> BenchRow:
        return BenchRow(workload, enabled, statistics.fmean(times), statistics.stdev(times), len(times))

    return BenchReport(workload, row(on_times, True), row(off_times, False), faked)

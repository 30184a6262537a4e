"""Deterministic synthetic triage corpus.

Sixty-two benign PE files, each built to trip exactly one subrule of the
default rule set: 20 debugger, 5 folder-manipulation and 37 MAC-address
samples. Eighteen of them are unsigned and carry a malicious verdict; those
share code sections in groups of 7 and 6, plus five samples with code of
their own. The remaining 44 are signed, benign, or missing from the verdict
file. Nothing here executes anything; the files only carry strings and
import tables.

Run ``python -m evasionkit.corpus OUTDIR`` to write the files together with
``verdicts.csv``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import random
from dataclasses import dataclass
from pathlib import Path

from .pe.builder import PeSpec, SectionSpec, build_pe
from .rulelang.engine import widen

MALICIOUS = "malicious"
BENIGN = "benign"
UNKNOWN = "unknown"

VERDICTS_FILE = "verdicts.csv"


@dataclass(frozen=True)
class CorpusSample:
    data: bytes
    rule: str
    signed: bool
    verdict: str
    group: str | None

    @property
    def md5(self) -> str:
        return hashlib.md5(self.data).hexdigest()

    @property
    def selected(self) -> bool:
        return not self.signed and self.verdict == MALICIOUS


def _strings(*items: str, wide: tuple[str, ...] = ()) -> bytes:
    out = bytearray()
    for s in items:
        out += s.encode("ascii") + b"\x00"
    for s in wide:
        out += widen(s.encode("ascii")) + b"\x00\x00"
    return bytes(out)


_DEBUGGER_TOOLS = ["OllyDbg", "x64dbg", "WinDbg", "Immunity Debugger"]
_AV_FOLDERS = ["Kaspersky Lab", "Avast Software", "Windows Defender", "K7 Computing", "Avira"]
_VM_PREFIXES = ["08:00:27", "08-00-27", "00:0C:29", "00:50:56", "00:05:69", "00:1C:14", "00:1C:42"]


def _debugger_payload(rng: random.Random) -> tuple[bytes, list]:
    tools = rng.sample(_DEBUGGER_TOOLS, rng.randint(1, 3))
    rdata = _strings("GetThreadContext", wide=tuple(t.lower() + ".exe" for t in tools))
    imports = [
        ("kernel32.dll", ["IsDebuggerPresent", "CheckRemoteDebuggerPresent", "GetProcAddress", "ExitProcess"]),
        ("ntdll.dll", ["NtQueryInformationProcess"]),
    ]
    return rdata, imports


def _folder_payload(rng: random.Random) -> tuple[bytes, list]:
    vendors = rng.sample(_AV_FOLDERS, rng.randint(2, 4))
    rdata = _strings(wide=("C:\\Program Files\\", "C:\\ProgramData\\", *vendors))
    imports = [
        ("kernel32.dll", ["FindFirstFileW", "FindNextFileW", "FindClose", "GetFileAttributesW", "CreateDirectoryW"]),
    ]
    return rdata, imports


def _mac_payload(rng: random.Random) -> tuple[bytes, list]:
    prefixes = rng.sample(_VM_PREFIXES, rng.randint(2, 4))
    half = len(prefixes) // 2
    rdata = _strings(*prefixes[:half], wide=tuple(prefixes[half:]))
    api = rng.choice(["GetAdaptersInfo", "GetAdaptersAddresses"])
    imports = [("iphlpapi.dll", [api]), ("kernel32.dll", ["GetProcessHeap", "HeapAlloc"])]
    return rdata, imports


_PAYLOADS = {
    "debugger": _debugger_payload,
    "folder_manipulation": _folder_payload,
    "mac_addresses": _mac_payload,
}

# (rule, group letter or None, signed, verdict, count)
_PLAN = [
    ("debugger", "A", False, MALICIOUS, 7),
    ("debugger", "B", False, MALICIOUS, 6),
    ("debugger", "C", False, MALICIOUS, 1),
    ("debugger", "D", False, MALICIOUS, 1),
    ("debugger", "E", False, MALICIOUS, 1),
    ("debugger", None, True, MALICIOUS, 2),
    ("debugger", None, False, BENIGN, 1),
    ("debugger", None, False, UNKNOWN, 1),
    ("folder_manipulation", None, True, MALICIOUS, 2),
    ("folder_manipulation", None, False, BENIGN, 2),
    ("folder_manipulation", None, False, UNKNOWN, 1),
    ("mac_addresses", "F", False, MALICIOUS, 1),
    ("mac_addresses", "G", False, MALICIOUS, 1),
    ("mac_addresses", None, True, MALICIOUS, 8),
    ("mac_addresses", None, True, BENIGN, 4),
    ("mac_addresses", None, False, BENIGN, 13),
    ("mac_addresses", None, False, UNKNOWN, 10),
]


def _code(seed: str, size: int) -> bytes:
    rng = random.Random(seed)
    # prologue, random body, epilogue; no trailing zeros so padding stays separable
    return b"\x55\x8b\xec" + rng.randbytes(size) + b"\x5d\xc3"


def build_corpus(seed: int = 2020) -> list[CorpusSample]:
    rng = random.Random(seed)
    samples = []
    index = 0
    for rule, group, signed, verdict, count in _PLAN:
        for _ in range(count):
            index += 1
            code_seed = f"group-{group}" if group else f"sample-{index}"
            text = _code(code_seed, 3600)
            rdata, imports = _PAYLOADS[rule](rng)
            packed = rng.randbytes(6144 + rng.randint(0, 2048))
            spec = PeSpec(
                text=text,
                rdata=rdata + f"build-{index:03d}".encode() + b"\x00",
                imports=imports,
                resources=rng.randint(1, 3),
                certificate=rng.randbytes(96) if signed else None,
                extra_sections=[SectionSpec(".data", packed)],
                timestamp=0x5DD00000 + index * 3600,
            )
            samples.append(CorpusSample(build_pe(spec), rule, signed, verdict, group))
    return samples


def write_corpus(outdir: str | Path, samples: list[CorpusSample] | None = None) -> list[Path]:
    """Write each sample as ``<md5>.exe`` plus ``verdicts.csv``; returns the sample paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    samples = samples if samples is not None else build_corpus()
    paths = []
    for s in samples:
        path = outdir / f"{s.md5}.exe"
        path.write_bytes(s.data)
        paths.append(path)
    with open(outdir / VERDICTS_FILE, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["md5", "verdict"])
        for s in samples:
            if s.verdict != UNKNOWN:
                writer.writerow([s.md5, s.verdict])
    return paths


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Write the synthetic triage corpus.")
    parser.add_argument("outdir")
    parser.add_argument("--seed", type=int, default=2020)
    args = parser.parse_args(argv)
    paths = write_corpus(args.outdir, build_corpus(args.seed))
    print(f"wrote {len(paths)} samples and {VERDICTS_FILE} to {args.outdir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

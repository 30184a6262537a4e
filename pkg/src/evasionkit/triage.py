"""Static triage: rule matching, sample selection and code-sharing groups."""

from __future__ import annotations

import csv
import hashlib
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol

from .pe import PeFormatError, PeImage, SampleGroup, group_samples, parse_pe
from .rulelang import CompiledRuleSet, MatchReport, ScanSubject, match_subject

MALICIOUS = "malicious"
BENIGN = "benign"
UNKNOWN = "unknown"
VERDICTS = (MALICIOUS, BENIGN, UNKNOWN)


class VerdictProvider(Protocol):
    def verdict(self, md5: str) -> str: ...


class FileVerdicts:
    """Offline reputation lookups from a ``md5,verdict`` CSV file."""

    def __init__(self, verdicts: Mapping[str, str] | None = None):
        self._verdicts = {k.lower(): v for k, v in (verdicts or {}).items()}

    @classmethod
    def from_csv(cls, path: str | Path) -> FileVerdicts:
        verdicts = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row or row[0].strip().startswith("#"):
                    continue
                if len(row) < 2:
                    raise ValueError(f"{path}:{lineno}: expected 'md5,verdict'")
                md5, verdict = row[0].strip().lower(), row[1].strip().lower()
                if lineno == 1 and md5 == "md5":
                    continue
                if len(md5) != 32 or any(c not in string.hexdigits for c in md5):
                    raise ValueError(f"{path}:{lineno}: bad MD5 {row[0]!r}")
                if verdict not in VERDICTS:
                    raise ValueError(f"{path}:{lineno}: unknown verdict {row[1]!r}")
                verdicts[md5] = verdict
        return cls(verdicts)

    def verdict(self, md5: str) -> str:
        return self._verdicts.get(md5.lower(), UNKNOWN)


def is_selected(matched: bool, signed: bool, verdict: str) -> bool:
    """Keep only rule hits that are unsigned and known malicious."""
    return matched and not signed and verdict == MALICIOUS


@dataclass(frozen=True)
class ScannedFile:
    path: str
    md5: str
    data: bytes
    pe: PeImage | None
    pe_error: str | None
    report: MatchReport

    @property
    def matched_rules(self) -> list[str]:
        return self.report.matched_rules


def scan_bytes(crs: CompiledRuleSet, data: bytes, path: str = "") -> ScannedFile:
    md5 = hashlib.md5(data).hexdigest()
    try:
        pe, pe_error = parse_pe(data), None
    except PeFormatError as exc:
        pe, pe_error = None, str(exc)
    report = match_subject(crs, ScanSubject(data, pe, path or md5))
    return ScannedFile(path, md5, data, pe, pe_error, report)


@dataclass(frozen=True)
class TriageRecord:
    sample_id: str
    path: str
    matched_rules: tuple[str, ...]
    signed: bool
    verdict: str
    selected: bool
    group_key: str | None = None
    group: str | None = None

    def to_dict(self) -> dict:
        return {
            "md5": self.sample_id,
            "path": self.path,
            "matched_rules": list(self.matched_rules),
            "signed": self.signed,
            "verdict": self.verdict,
            "selected": self.selected,
            "group_key": self.group_key,
            "group": self.group,
        }


@dataclass(frozen=True)
class TriageResult:
    records: tuple[TriageRecord, ...]
    groups: tuple[tuple[str, SampleGroup], ...]
    rule_counts: Mapping[str, int]
    selected_rule_counts: Mapping[str, int]

    @property
    def selected(self) -> list[TriageRecord]:
        return [r for r in self.records if r.selected]

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "selected_count": len(self.selected),
            "rule_counts": dict(self.rule_counts),
            "selected_rule_counts": dict(self.selected_rule_counts),
            "groups": [
                {"group": letter, "key": g.key, "members": list(g.members)}
                for letter, g in self.groups
            ],
        }


def group_letter(index: int) -> str:
    letters = string.ascii_uppercase
    name = ""
    index += 1
    while index:
        index, rem = divmod(index - 1, 26)
        name = letters[rem] + name
    return name


def triage(
    files: Iterable[ScannedFile], provider: VerdictProvider, rule_names: Iterable[str]
) -> TriageResult:
    files = list(files)
    rule_names = list(rule_names)
    counts = dict.fromkeys(rule_names, 0)
    selected_counts = dict.fromkeys(rule_names, 0)
    staged = []
    for f in files:
        matched = tuple(f.matched_rules)
        signed = f.pe is not None and f.pe.has_certificate_table
        verdict = provider.verdict(f.md5)
        selected = is_selected(bool(matched), signed, verdict)
        for name in matched:
            counts[name] += 1
            if selected:
                selected_counts[name] += 1
        staged.append((f, matched, signed, verdict, selected))

    seen: set[str] = set()
    chosen = []
    for f, *_, selected in staged:
        if selected and f.md5 not in seen:
            seen.add(f.md5)
            chosen.append((f.md5, f.pe, f.data))
    groups = group_samples(chosen)
    lettered = tuple((group_letter(i), g) for i, g in enumerate(groups))
    membership = {m: (letter, g.key) for letter, g in lettered for m in g.members}

    records = []
    for f, matched, signed, verdict, selected in staged:
        letter, key = membership.get(f.md5, (None, None)) if selected else (None, None)
        records.append(
            TriageRecord(f.md5, f.path, matched, signed, verdict, selected, key, letter)
        )
    return TriageResult(tuple(records), lettered, counts, selected_counts)

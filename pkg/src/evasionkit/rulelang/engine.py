"""Compile a rule set into one automaton and evaluate rules against subjects."""

from __future__ import annotations

import operator
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .ast import (
    AllOf,
    And,
    AnyOf,
    Condition,
    CountOf,
    EntropyCmp,
    ImportPredicate,
    Not,
    Or,
    PatternDef,
    PatternRef,
    Rule,
    RuleSet,
    Unsigned,
)
from .automaton import Automaton

if TYPE_CHECKING:
    from evasionkit.pe import PeImage

_CMP = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


def widen(text: bytes) -> bytes:
    """UTF-16LE expansion used by the ``wide`` modifier: each byte followed by NUL."""
    return bytes(b for ch in text for b in (ch, 0))


def pattern_variants(p: PatternDef) -> list[bytes]:
    variants = []
    if p.ascii:
        variants.append(p.text)
    if p.wide:
        variants.append(widen(p.text))
    return variants


@dataclass(frozen=True)
class ScanSubject:
    """Raw bytes plus optional PE facts. Without ``pe`` the PE predicates are false."""

    data: bytes
    pe: PeImage | None = None
    name: str = ""


@dataclass
class RuleMatch:
    rule: str
    matched: bool
    offsets: dict[str, list[int]] = field(default_factory=dict)


@dataclass
class MatchReport:
    subject: str
    rules: list[RuleMatch]

    @property
    def matched_rules(self) -> list[str]:
        return [r.rule for r in self.rules if r.matched]

    def __getitem__(self, rule: str) -> RuleMatch:
        for r in self.rules:
            if r.rule == rule:
                return r
        raise KeyError(rule)


@dataclass
class CorpusResult:
    counts: dict[str, int]
    reports: list[MatchReport]


class CompiledRuleSet:
    def __init__(self, ruleset: RuleSet):
        self.ruleset = ruleset
        keywords: list[tuple[bytes, bool]] = []
        owners: list[tuple[int, str]] = []
        for ri, rule in enumerate(ruleset.rules):
            for p in rule.strings:
                for variant in pattern_variants(p):
                    keywords.append((variant, p.nocase))
                    owners.append((ri, p.id))
        self.automaton = Automaton(keywords)
        self._owners = owners

    @property
    def rules(self) -> tuple[Rule, ...]:
        return self.ruleset.rules

    def scan(self, data: bytes) -> list[dict[str, list[int]]]:
        """Per-rule map of pattern id to sorted, de-duplicated start offsets."""
        found: list[dict[str, set[int]]] = [
            {p.id: set() for p in rule.strings} for rule in self.rules
        ]
        owners = self._owners
        for kid, start in self.automaton.iter_matches(data):
            ri, pid = owners[kid]
            found[ri][pid].add(start)
        return [{pid: sorted(offs) for pid, offs in per.items()} for per in found]

    def match(self, subject: ScanSubject | bytes) -> MatchReport:
        return match_subject(self, subject)


def compile_rules(rs: RuleSet) -> CompiledRuleSet:
    return CompiledRuleSet(rs)


def evaluate(
    rule: Rule, cond: Condition, present: set[str], pe: PeImage | None = None
) -> bool:
    """Two-valued evaluation of ``cond`` given the set of present pattern ids."""
    if isinstance(cond, PatternRef):
        return cond.id in present
    if isinstance(cond, And):
        return all(evaluate(rule, op, present, pe) for op in cond.operands)
    if isinstance(cond, Or):
        return any(evaluate(rule, op, present, pe) for op in cond.operands)
    if isinstance(cond, Not):
        return not evaluate(rule, cond.operand, present, pe)
    if isinstance(cond, (CountOf, AnyOf, AllOf)):
        ids = rule.resolve_set(cond.ids)
        hits = sum(1 for i in ids if i in present)
        if isinstance(cond, CountOf):
            return hits >= cond.n
        if isinstance(cond, AnyOf):
            return hits >= 1
        return hits == len(ids)
    if isinstance(cond, ImportPredicate):
        if pe is None:
            return False
        dll = cond.dll.lower()
        return any(
            imp.dll.lower() == dll and cond.function in imp.functions for imp in pe.imports
        )
    if isinstance(cond, EntropyCmp):
        if pe is None:
            return False
        return _CMP[cond.comparator](pe.file_entropy, cond.threshold)
    if isinstance(cond, Unsigned):
        return pe is not None and not pe.has_certificate_table
    raise TypeError(f"unsupported condition node {type(cond).__name__}")


def match_subject(crs: CompiledRuleSet, subject: ScanSubject | bytes) -> MatchReport:
    if isinstance(subject, (bytes, bytearray, memoryview)):
        subject = ScanSubject(bytes(subject))
    per_rule = crs.scan(subject.data)
    results = []
    for rule, offsets in zip(crs.rules, per_rule):
        present = {pid for pid, offs in offsets.items() if offs}
        matched = evaluate(rule, rule.condition, present, subject.pe)
        results.append(RuleMatch(rule.name, matched, offsets))
    return MatchReport(subject.name, results)


def match_corpus(crs: CompiledRuleSet, subjects: Sequence[ScanSubject | bytes]) -> CorpusResult:
    counts = {rule.name: 0 for rule in crs.rules}
    reports = []
    for subject in subjects:
        report = match_subject(crs, subject)
        for name in report.matched_rules:
            counts[name] += 1
        reports.append(report)
    return CorpusResult(counts, reports)

"""Rule and condition tree types for the rule language."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

MODIFIERS = frozenset({"nocase", "wide", "ascii"})
COMPARATORS = ("<", "<=", ">", ">=")
MAX_PATTERN_LENGTH = 1024
MAX_PATTERNS = 10_000


class RuleError(Exception):
    """Base class for rule-language errors."""


class RuleSyntaxError(RuleError):
    """Malformed token or production, with a 1-based source position."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.message = message
        self.line = line
        self.column = column


class RuleSemanticError(RuleError):
    """Well-formed source that violates a rule-set invariant."""


@dataclass(frozen=True)
class PatternDef:
    id: str
    text: bytes
    modifiers: frozenset[str] = frozenset()

    @property
    def ascii(self) -> bool:
        # ascii is implied when wide is not requested on its own
        return "ascii" in self.modifiers or "wide" not in self.modifiers

    @property
    def wide(self) -> bool:
        return "wide" in self.modifiers

    @property
    def nocase(self) -> bool:
        return "nocase" in self.modifiers


@dataclass(frozen=True)
class PatternRef:
    id: str


@dataclass(frozen=True)
class And:
    operands: tuple[Condition, ...]


@dataclass(frozen=True)
class Or:
    operands: tuple[Condition, ...]


@dataclass(frozen=True)
class Not:
    operand: Condition


@dataclass(frozen=True)
class CountOf:
    """At least ``n`` of the patterns in ``ids`` are present.

    ``ids`` is None for the ``them`` form; the rule's declared patterns
    are substituted at evaluation time.
    """

    n: int
    ids: tuple[str, ...] | None


@dataclass(frozen=True)
class AnyOf:
    ids: tuple[str, ...] | None


@dataclass(frozen=True)
class AllOf:
    ids: tuple[str, ...] | None


@dataclass(frozen=True)
class ImportPredicate:
    dll: str
    function: str


@dataclass(frozen=True)
class EntropyCmp:
    comparator: str
    threshold: float


@dataclass(frozen=True)
class Unsigned:
    pass


Condition = Union[
    PatternRef, And, Or, Not, CountOf, AnyOf, AllOf, ImportPredicate, EntropyCmp, Unsigned
]


@dataclass(frozen=True)
class Rule:
    name: str
    condition: Condition
    strings: tuple[PatternDef, ...] = ()
    meta: dict[str, str | int | bool] = field(default_factory=dict, compare=False)

    @property
    def pattern_ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.strings)

    def resolve_set(self, ids: tuple[str, ...] | None) -> tuple[str, ...]:
        return self.pattern_ids if ids is None else ids


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...] = ()

    def __len__(self) -> int:
        return len(self.rules)

    def __iter__(self):
        return iter(self.rules)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.rules]

    def get(self, name: str) -> Rule:
        for rule in self.rules:
            if rule.name == name:
                return rule
        raise KeyError(name)


def referenced_ids(cond: Condition) -> set[str]:
    """Pattern identifiers named explicitly anywhere in ``cond``."""
    if isinstance(cond, PatternRef):
        return {cond.id}
    if isinstance(cond, (And, Or)):
        out: set[str] = set()
        for op in cond.operands:
            out |= referenced_ids(op)
        return out
    if isinstance(cond, Not):
        return referenced_ids(cond.operand)
    if isinstance(cond, (CountOf, AnyOf, AllOf)) and cond.ids is not None:
        return set(cond.ids)
    return set()

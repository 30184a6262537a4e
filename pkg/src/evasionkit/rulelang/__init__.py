"""A small Yara-like rule language: patterns, PE predicates and boolean conditions."""

from __future__ import annotations

from importlib import resources

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
    RuleError,
    RuleSemanticError,
    RuleSet,
    RuleSyntaxError,
    Unsigned,
)
from .engine import (
    CompiledRuleSet,
    CorpusResult,
    MatchReport,
    RuleMatch,
    ScanSubject,
    compile_rules,
    evaluate,
    match_corpus,
    match_subject,
    pattern_variants,
    widen,
)
from .parser import parse_ruleset

DEFAULT_RULES = "evasive.yar"


def default_rules_source() -> str:
    return resources.files("evasionkit.data").joinpath("rules", DEFAULT_RULES).read_text("utf-8")


def load_default_ruleset() -> RuleSet:
    return parse_ruleset(default_rules_source())


__all__ = [
    "AllOf",
    "And",
    "AnyOf",
    "CompiledRuleSet",
    "Condition",
    "CorpusResult",
    "CountOf",
    "EntropyCmp",
    "ImportPredicate",
    "MatchReport",
    "Not",
    "Or",
    "PatternDef",
    "PatternRef",
    "Rule",
    "RuleError",
    "RuleMatch",
    "RuleSemanticError",
    "RuleSet",
    "RuleSyntaxError",
    "ScanSubject",
    "Unsigned",
    "compile_rules",
    "default_rules_source",
    "evaluate",
    "load_default_ruleset",
    "match_corpus",
    "match_subject",
    "parse_ruleset",
    "pattern_variants",
    "widen",
]

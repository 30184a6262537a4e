"""Lexer and recursive-descent parser for the rule language.

Grammar::

    ruleset   = { rule } ;
    rule      = "rule" IDENT "{" [ "meta:" { IDENT "=" LITERAL } ]
                [ "strings:" { STRID "=" QUOTED { MOD } } ]
                "condition:" expr "}" ;
    expr      = term { "or" term } ;
    term      = factor { "and" factor } ;
    factor    = "not" factor | "(" expr ")" | primary ;
    primary   = STRID
              | INT "of" set | "any" "of" set | "all" "of" set
              | "import" "(" QUOTED "," QUOTED ")"
              | "entropy" CMP NUMBER
              | "unsigned" ;
    set       = "them" | "(" STRID { "," STRID } ")" ;

``//`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ast import (
    COMPARATORS,
    MAX_PATTERN_LENGTH,
    MAX_PATTERNS,
    MODIFIERS,
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
    RuleSemanticError,
    RuleSet,
    RuleSyntaxError,
    Unsigned,
    referenced_ids,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<number>\d+\.\d+|\d+)
  | (?P<strid>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<quoted>"(?:[^"\\\n]|\\.)*")
  | (?P<cmp><=|>=|<|>)
  | (?P<punct>[{}(),=:])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": b"\n", "t": b"\t", "r": b"\r", "\\": b"\\", '"': b'"', "0": b"\x00"}


@dataclass(frozen=True)
class Token:
    kind: str
    value: str
    line: int
    column: int


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        column = pos - line_start + 1
        if m is None:
            if source[pos] == '"':
                raise RuleSyntaxError("unterminated string literal", line, column)
            raise RuleSyntaxError(f"unexpected character {source[pos]!r}", line, column)
        kind = m.lastgroup
        text = m.group()
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, text, line, column))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            line_start = pos + text.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


def decode_quoted(tok: Token) -> bytes:
    body = tok.value[1:-1]
    out = bytearray()
    i = 0
    while i < len(body):
        ch = body[i]
        if ch != "\\":
            out += ch.encode("utf-8")
            i += 1
            continue
        esc = body[i + 1]
        if esc == "x":
            digits = body[i + 2 : i + 4]
            if not re.fullmatch(r"[0-9A-Fa-f]{2}", digits):
                raise RuleSyntaxError("bad \\x escape", tok.line, tok.column + i + 1)
            out.append(int(digits, 16))
            i += 4
        elif esc in _ESCAPES:
            out += _ESCAPES[esc]
            i += 2
        else:
            raise RuleSyntaxError(f"unknown escape \\{esc}", tok.line, tok.column + i + 1)
    return bytes(out)


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def error(self, message: str, tok: Token | None = None) -> RuleSyntaxError:
        tok = tok or self.tok
        found = tok.value or "end of input"
        return RuleSyntaxError(f"{message}, found {found!r}", tok.line, tok.column)

    def at(self, kind: str, value: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def at_keyword(self, word: str) -> bool:
        return self.at("ident", word)

    def expect(self, kind: str, value: str | None = None) -> Token:
        if not self.at(kind, value):
            raise self.error(f"expected {value or kind}")
        tok = self.tok
        self.i += 1
        return tok

    def section(self, word: str) -> bool:
        if self.at_keyword(word) and self.peek().kind == "punct" and self.peek().value == ":":
            self.i += 2
            return True
        return False

    def ruleset(self) -> list[Rule]:
        rules = []
        while not self.at("eof"):
            rules.append(self.rule())
        return rules

    def rule(self) -> Rule:
        if not self.at_keyword("rule"):
            raise self.error("expected 'rule'")
        self.i += 1
        name = self.expect("ident").value
        self.expect("punct", "{")
        meta: dict[str, str | int | bool] = {}
        if self.section("meta"):
            while self.at("ident") and not self._at_section_start():
                key = self.expect("ident").value
                self.expect("punct", "=")
                meta[key] = self.literal()
        strings: list[PatternDef] = []
        if self.section("strings"):
            while self.at("strid"):
                strings.append(self.pattern())
        if not self.section("condition"):
            raise self.error("expected 'condition:'")
        cond = self.expr()
        self.expect("punct", "}")
        return Rule(name=name, condition=cond, strings=tuple(strings), meta=meta)

    def _at_section_start(self) -> bool:
        nxt = self.peek()
        return self.tok.value in ("strings", "condition") and nxt.kind == "punct" and nxt.value == ":"

    def literal(self) -> str | int | bool:
        tok = self.tok
        if tok.kind == "quoted":
            self.i += 1
            return decode_quoted(tok).decode("utf-8", errors="replace")
        if tok.kind == "number" and "." not in tok.value:
            self.i += 1
            return int(tok.value)
        if tok.kind == "ident" and tok.value in ("true", "false"):
            self.i += 1
            return tok.value == "true"
        raise self.error("expected literal")

    def pattern(self) -> PatternDef:
        ident = self.expect("strid")
        self.expect("punct", "=")
        tok = self.expect("quoted")
        text = decode_quoted(tok)
        mods = set()
        while self.at("ident") and self.tok.value in MODIFIERS:
            mods.add(self.tok.value)
            self.i += 1
        if not text:
            raise RuleSemanticError(f"pattern {ident.value} is empty")
        if len(text) > MAX_PATTERN_LENGTH:
            raise RuleSemanticError(
                f"pattern {ident.value} exceeds {MAX_PATTERN_LENGTH} bytes"
            )
        return PatternDef(ident.value, text, frozenset(mods))

    def expr(self) -> Condition:
        operands = [self.term()]
        while self.at_keyword("or"):
            self.i += 1
            operands.append(self.term())
        return operands[0] if len(operands) == 1 else Or(tuple(operands))

    def term(self) -> Condition:
        operands = [self.factor()]
        while self.at_keyword("and"):
            self.i += 1
            operands.append(self.factor())
        return operands[0] if len(operands) == 1 else And(tuple(operands))

    def factor(self) -> Condition:
        if self.at_keyword("not"):
            self.i += 1
            return Not(self.factor())
        if self.at("punct", "("):
            self.i += 1
            inner = self.expr()
            self.expect("punct", ")")
            return inner
        return self.primary()

    def primary(self) -> Condition:
        tok = self.tok
        if tok.kind == "strid":
            self.i += 1
            return PatternRef(tok.value)
        if tok.kind == "number":
            if "." in tok.value:
                raise self.error("expected integer count")
            self.i += 1
            self._keyword("of")
            return CountOf(int(tok.value), self.set_())
        if tok.kind == "ident":
            word = tok.value
            if word in ("any", "all"):
                self.i += 1
                self._keyword("of")
                ids = self.set_()
                return AnyOf(ids) if word == "any" else AllOf(ids)
            if word == "import":
                self.i += 1
                self.expect("punct", "(")
                dll = decode_quoted(self.expect("quoted")).decode("utf-8", errors="replace")
                self.expect("punct", ",")
                fn = decode_quoted(self.expect("quoted")).decode("utf-8", errors="replace")
                self.expect("punct", ")")
                return ImportPredicate(dll, fn)
            if word == "entropy":
                self.i += 1
                cmp_tok = self.expect("cmp")
                num = self.expect("number")
                threshold = float(num.value)
                if not 0.0 <= threshold <= 8.0:
                    raise RuleSemanticError(f"entropy threshold {threshold} outside [0, 8]")
                return EntropyCmp(cmp_tok.value, threshold)
            if word == "unsigned":
                self.i += 1
                return Unsigned()
        raise self.error("expected condition")

    def _keyword(self, word: str) -> None:
        if not self.at_keyword(word):
            raise self.error(f"expected '{word}'")
        self.i += 1

    def set_(self) -> tuple[str, ...] | None:
        if self.at_keyword("them"):
            self.i += 1
            return None
        self.expect("punct", "(")
        ids = [self.expect("strid").value]
        while self.at("punct", ","):
            self.i += 1
            ids.append(self.expect("strid").value)
        self.expect("punct", ")")
        return tuple(dict.fromkeys(ids))


def _check_condition(rule: Rule, cond: Condition) -> None:
    declared = set(rule.pattern_ids)
    if isinstance(cond, (And, Or)):
        for op in cond.operands:
            _check_condition(rule, op)
    elif isinstance(cond, Not):
        _check_condition(rule, cond.operand)
    elif isinstance(cond, (CountOf, AnyOf, AllOf)):
        if cond.ids is None and not declared:
            raise RuleSemanticError(f"rule {rule.name}: 'of them' used with no declared patterns")
        size = len(rule.resolve_set(cond.ids))
        if isinstance(cond, CountOf) and not 1 <= cond.n <= size:
            raise RuleSemanticError(
                f"rule {rule.name}: count {cond.n} out of range for a set of {size}"
            )
    elif isinstance(cond, EntropyCmp) and cond.comparator not in COMPARATORS:
        raise RuleSemanticError(f"rule {rule.name}: bad comparator {cond.comparator}")


def validate(rules: list[Rule]) -> RuleSet:
    seen: set[str] = set()
    total = 0
    for rule in rules:
        if rule.name in seen:
            raise RuleSemanticError(f"duplicate rule name {rule.name}")
        seen.add(rule.name)
        ids = rule.pattern_ids
        if len(set(ids)) != len(ids):
            raise RuleSemanticError(f"rule {rule.name}: duplicate pattern identifier")
        total += len(ids)
        undeclared = referenced_ids(rule.condition) - set(ids)
        if undeclared:
            raise RuleSemanticError(
                f"rule {rule.name}: undeclared pattern {sorted(undeclared)[0]}"
            )
        _check_condition(rule, rule.condition)
    if total > MAX_PATTERNS:
        raise RuleSemanticError(f"rule set declares {total} patterns, limit is {MAX_PATTERNS}")
    return RuleSet(tuple(rules))


def parse_ruleset(source: str | bytes) -> RuleSet:
    """Parse rule-language source into a validated :class:`RuleSet`."""
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise RuleSyntaxError("source is not valid UTF-8", 1, exc.start + 1) from exc
    return validate(_Parser(tokenize(source)).ruleset())

"""Propositions, LTL formula ASTs, concrete syntax, and lasso-trace evaluation.

Concrete syntax uses ASCII operator names: ``! & | -> X G F U`` with
``true``/``false`` literals.  Precedence (tightest first): unary operators
(``!``, ``X``, ``G``, ``F``), then ``U``, ``&``, ``|``, ``->``; binary
operators associate to the right.  ``&`` and ``|`` build n-ary nodes whose
children are flattened, deduplicated, and sorted by their canonical
rendering, so structurally equal formulas compare equal.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence


class PropKind(enum.Enum):
    SENSOR = "sensor"
    ACTION = "action"
    MEMORY = "memory"


NAME_RE = re.compile(r"[a-z][a-z0-9_]*\Z")


@dataclass(frozen=True)
class Proposition:
    name: str
    kind: PropKind

    def __post_init__(self) -> None:
        if not NAME_RE.match(self.name):
            raise ValueError(f"bad proposition name: {self.name!r}")

    @property
    def system_owned(self) -> bool:
        return self.kind is not PropKind.SENSOR


class Formula:
    """Base class for formula AST nodes. Nodes are immutable and hashable."""

    __slots__ = ()

    def __str__(self) -> str:
        return format_formula(self)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({format_formula(self)!r})"


@dataclass(frozen=True, repr=False)
class Lit(Formula):
    value: bool


@dataclass(frozen=True, repr=False)
class Prop(Formula):
    prop: Proposition


@dataclass(frozen=True, repr=False)
class Not(Formula):
    operand: Formula


@dataclass(frozen=True, repr=False)
class Next(Formula):
    operand: Formula


@dataclass(frozen=True, repr=False)
class Always(Formula):
    operand: Formula


@dataclass(frozen=True, repr=False)
class Eventually(Formula):
    operand: Formula


@dataclass(frozen=True, repr=False)
class And(Formula):
    children: tuple[Formula, ...]


@dataclass(frozen=True, repr=False)
class Or(Formula):
    children: tuple[Formula, ...]


@dataclass(frozen=True, repr=False)
class Implies(Formula):
    lhs: Formula
    rhs: Formula


@dataclass(frozen=True, repr=False)
class Until(Formula):
    lhs: Formula
    rhs: Formula


TRUE = Lit(True)
FALSE = Lit(False)


def conj(children: Iterable[Formula]) -> Formula:
    """Canonical n-ary conjunction: flattened, deduplicated, sorted children."""
    return _nary(And, children, empty=TRUE)


def disj(children: Iterable[Formula]) -> Formula:
    """Canonical n-ary disjunction: flattened, deduplicated, sorted children."""
    return _nary(Or, children, empty=FALSE)


def _nary(cls, children: Iterable[Formula], empty: Formula) -> Formula:
    flat: list[Formula] = []
    for child in children:
        if isinstance(child, cls):
            flat.extend(child.children)
        else:
            flat.append(child)
    seen: dict[str, Formula] = {}
    for child in flat:
        seen.setdefault(format_formula(child), child)
    ordered = [seen[key] for key in sorted(seen)]
    if not ordered:
        return empty
    if len(ordered) == 1:
        return ordered[0]
    return cls(tuple(ordered))


class FormulaSyntaxError(Exception):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnknownProposition(Exception):
    def __init__(self, name: str):
        super().__init__(f"undeclared proposition: {name}")
        self.name = name


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<arrow>->)|(?P<op>[!&|()])"
    r"|(?P<word>[A-Za-z][A-Za-z0-9_]*))"
)

_UNARY = {"!": Not, "X": Next, "G": Always, "F": Eventually}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if not match or match.end() == match.start():
            if text[pos:].strip() == "":
                break
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if match.lastgroup == "arrow":
            tokens.append(("->", "->", match.start("arrow")))
        elif match.lastgroup == "op":
            op = match.group("op")
            tokens.append((op, op, match.start("op")))
        else:
            word = match.group("word")
            start = match.start("word")
            if word in ("X", "G", "F", "U"):
                tokens.append((word, word, start))
            elif word in ("true", "false"):
                tokens.append(("lit", word, start))
            else:
                tokens.append(("name", word, start))
        pos = match.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, props: Mapping[str, Proposition]):
        self.tokens = _tokenize(text)
        self.props = props
        self.index = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.index]

    def advance(self) -> tuple[str, str, int]:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def expect(self, kind: str) -> tuple[str, str, int]:
        token = self.advance()
        if token[0] != kind:
            raise FormulaSyntaxError(f"expected {kind!r}, got {token[1]!r}", token[2])
        return token

    def parse(self) -> Formula:
        formula = self.implies()
        kind, value, pos = self.peek()
        if kind != "eof":
            raise FormulaSyntaxError(f"unexpected token {value!r}", pos)
        return formula

    def implies(self) -> Formula:
        left = self.disjunction()
        if self.peek()[0] == "->":
            self.advance()
            return Implies(left, self.implies())
        return left

    def disjunction(self) -> Formula:
        items = [self.conjunction()]
        while self.peek()[0] == "|":
            self.advance()
            items.append(self.conjunction())
        return disj(items) if len(items) > 1 else items[0]

    def conjunction(self) -> Formula:
        items = [self.until()]
        while self.peek()[0] == "&":
            self.advance()
            items.append(self.until())
        return conj(items) if len(items) > 1 else items[0]

    def until(self) -> Formula:
        left = self.unary()
        if self.peek()[0] == "U":
            self.advance()
            return Until(left, self.until())
        return left

    def unary(self) -> Formula:
        kind, value, pos = self.peek()
        if kind in _UNARY:
            self.advance()
            return _UNARY[kind](self.unary())
        return self.atom()

    def atom(self) -> Formula:
        kind, value, pos = self.advance()
        if kind == "lit":
            return TRUE if value == "true" else FALSE
        if kind == "name":
            if value not in self.props:
                raise UnknownProposition(value)
            return Prop(self.props[value])
        if kind == "(":
            inner = self.implies()
            self.expect(")")
            return inner
        raise FormulaSyntaxError(f"unexpected token {value!r}", pos)


def parse_formula(text: str, props: Iterable[Proposition]) -> Formula:
    """Parse concrete syntax into a canonical AST.

    Raises FormulaSyntaxError on malformed input and UnknownProposition for
    atoms missing from ``props``.
    """
    table = {p.name: p for p in props}
    return _Parser(text, table).parse()


def format_formula(f: Formula) -> str:
    """Canonical rendering; ``parse_formula(format_formula(f))`` equals ``f``."""
    if isinstance(f, Lit):
        return "true" if f.value else "false"
    if isinstance(f, Prop):
        return f.prop.name
    if isinstance(f, Not):
        return f"! ({format_formula(f.operand)})"
    if isinstance(f, Next):
        return f"X ({format_formula(f.operand)})"
    if isinstance(f, Always):
        return f"G ({format_formula(f.operand)})"
    if isinstance(f, Eventually):
        return f"F ({format_formula(f.operand)})"
    if isinstance(f, And):
        return "(" + " & ".join(format_formula(c) for c in f.children) + ")"
    if isinstance(f, Or):
        return "(" + " | ".join(format_formula(c) for c in f.children) + ")"
    if isinstance(f, Implies):
        return f"({format_formula(f.lhs)} -> {format_formula(f.rhs)})"
    if isinstance(f, Until):
        return f"({format_formula(f.lhs)} U {format_formula(f.rhs)})"
    raise TypeError(f"not a formula node: {f!r}")


def atoms(f: Formula) -> set[Proposition]:
    """All propositions mentioned anywhere in the formula."""
    out: set[Proposition] = set()
    stack = [f]
    while stack:
        node = stack.pop()
        if isinstance(node, Prop):
            out.add(node.prop)
        elif isinstance(node, (Not, Next, Always, Eventually)):
            stack.append(node.operand)
        elif isinstance(node, (And, Or)):
            stack.extend(node.children)
        elif isinstance(node, (Implies, Until)):
            stack.append(node.lhs)
            stack.append(node.rhs)
    return out


def subformula_count(f: Formula) -> int:
    count = 1
    if isinstance(f, (Not, Next, Always, Eventually)):
        count += subformula_count(f.operand)
    elif isinstance(f, (And, Or)):
        count += sum(subformula_count(c) for c in f.children)
    elif isinstance(f, (Implies, Until)):
        count += subformula_count(f.lhs) + subformula_count(f.rhs)
    return count


Valuation = Mapping[str, bool]


def check_valuation(val: Valuation, props: Iterable[Proposition]) -> None:
    """Valuations must be total over the declared proposition set, exactly."""
    names = {p.name for p in props}
    if set(val) != names:
        missing = sorted(names - set(val))
        extra = sorted(set(val) - names)
        raise ValueError(f"valuation domain mismatch: missing={missing} extra={extra}")


def eval_prop(f: Formula, val: Valuation) -> bool:
    """Evaluate a propositional (temporal-operator-free) formula at one state."""
    if isinstance(f, Lit):
        return f.value
    if isinstance(f, Prop):
        return val[f.prop.name]
    if isinstance(f, Not):
        return not eval_prop(f.operand, val)
    if isinstance(f, And):
        return all(eval_prop(c, val) for c in f.children)
    if isinstance(f, Or):
        return any(eval_prop(c, val) for c in f.children)
    if isinstance(f, Implies):
        return (not eval_prop(f.lhs, val)) or eval_prop(f.rhs, val)
    raise TypeError(f"not propositional: {f!r}")


def eval_step(f: Formula, cur: Valuation, nxt: Valuation) -> bool:
    """Evaluate a safety body over a (current, next) state pair.

    ``Next`` may wrap atoms only; anything deeper is a shape error caught by
    the spec validator before evaluation.
    """
    if isinstance(f, Lit):
        return f.value
    if isinstance(f, Prop):
        return cur[f.prop.name]
    if isinstance(f, Next):
        if not isinstance(f.operand, Prop):
            raise TypeError("X must wrap an atom inside safety bodies")
        return nxt[f.operand.prop.name]
    if isinstance(f, Not):
        return not eval_step(f.operand, cur, nxt)
    if isinstance(f, And):
        return all(eval_step(c, cur, nxt) for c in f.children)
    if isinstance(f, Or):
        return any(eval_step(c, cur, nxt) for c in f.children)
    if isinstance(f, Implies):
        return (not eval_step(f.lhs, cur, nxt)) or eval_step(f.rhs, cur, nxt)
    raise TypeError(f"illegal node in safety body: {f!r}")


def eval_trace(f: Formula, trace: Sequence[Valuation], loopback: int) -> bool:
    """Evaluate ``f`` at position 0 of the lasso trace[0..loopback-1]·(trace[loopback..])^ω.

    Standard LTL semantics; Until/Eventually are least fixpoints and Always a
    greatest fixpoint over the finite lasso graph.
    """
    n = len(trace)
    if not 0 <= loopback < n:
        raise IndexError(f"loopback {loopback} out of range for trace of length {n}")
    if n > 1:
        keys = set(trace[0])
        for val in trace[1:]:
            if set(val) != keys:
                raise ValueError("trace valuations must share one proposition set")
    succ = list(range(1, n)) + [loopback]
    succ[n - 1] = loopback

    memo: dict[Formula, list[bool]] = {}

    def table(node: Formula) -> list[bool]:
        if node in memo:
            return memo[node]
        if isinstance(node, Lit):
            row = [node.value] * n
        elif isinstance(node, Prop):
            row = [bool(trace[k][node.prop.name]) for k in range(n)]
        elif isinstance(node, Not):
            child = table(node.operand)
            row = [not v for v in child]
        elif isinstance(node, And):
            rows = [table(c) for c in node.children]
            row = [all(r[k] for r in rows) for k in range(n)]
        elif isinstance(node, Or):
            rows = [table(c) for c in node.children]
            row = [any(r[k] for r in rows) for k in range(n)]
        elif isinstance(node, Implies):
            left, right = table(node.lhs), table(node.rhs)
            row = [(not left[k]) or right[k] for k in range(n)]
        elif isinstance(node, Next):
            child = table(node.operand)
            row = [child[succ[k]] for k in range(n)]
        elif isinstance(node, Until):
            left, right = table(node.lhs), table(node.rhs)
            row = _lfp(lambda cur, k: right[k] or (left[k] and cur[succ[k]]), n)
        elif isinstance(node, Eventually):
            child = table(node.operand)
            row = _lfp(lambda cur, k: child[k] or cur[succ[k]], n)
        elif isinstance(node, Always):
            child = table(node.operand)
            row = _gfp(lambda cur, k: child[k] and cur[succ[k]], n)
        else:
            raise TypeError(f"not a formula node: {node!r}")
        memo[node] = row
        return row

    return table(f)[0]


def _lfp(step, n: int) -> list[bool]:
    cur = [False] * n
    for _ in range(n + 1):
        new = [step(cur, k) for k in range(n)]
        if new == cur:
            break
        cur = new
    return cur


def _gfp(step, n: int) -> list[bool]:
    cur = [True] * n
    for _ in range(n + 1):
        new = [step(cur, k) for k in range(n)]
        if new == cur:
            break
        cur = new
    return cur

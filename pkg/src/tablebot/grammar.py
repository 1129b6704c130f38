"""CNF production grammar, k-best CYK chart parsing, and instruction splitting.

Grammar files are line oriented:

    %version 1
    %start VP S
    LHS -> RHS1 RHS2 [weight]
    TAG -> 'word' [weight]
    # comment

Weights are nonnegative rule scores (higher preferred); a tree's weight is
the sum of its rule weights.  Ties break toward the leftmost-lowest split via
a deterministic structural key, so k-best lists are stable and prefix-closed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence


class FormatError(Exception):
    def __init__(self, line_no: int, line: str):
        super().__init__(f"bad grammar line {line_no}: {line!r}")
        self.line_no = line_no


class NotCNF(Exception):
    def __init__(self, line_no: int, line: str):
        super().__init__(f"rule is not CNF at line {line_no}: {line!r}")
        self.line_no = line_no


class OutOfVocabulary(Exception):
    def __init__(self, words: Sequence[str]):
        super().__init__(f"words not in the lexicon: {', '.join(words)}")
        self.words = tuple(words)


@dataclass(frozen=True)
class Grammar:
    nonterminals: frozenset[str]
    binary: tuple[tuple[str, str, str, float], ...]  # (lhs, rhs1, rhs2, weight)
    lexical: tuple[tuple[str, str, float], ...]  # (tag, word, weight)
    start: frozenset[str]

    def lexical_tags(self, word: str) -> list[tuple[str, float]]:
        return [(tag, w) for tag, token, w in self.lexical if token == word]

    @property
    def vocabulary(self) -> frozenset[str]:
        return frozenset(word for _, word, _ in self.lexical)


_RULE_RE = re.compile(
    r"^(?P<lhs>[A-Z][A-Z0-9$]*)\s*->\s*(?P<rhs>.+?)(?:\s+\[(?P<weight>[0-9.]+)\])?$"
)


def parse_grammar(text: str) -> Grammar:
    binary: list[tuple[str, str, str, float]] = []
    lexical: list[tuple[str, str, float]] = []
    start: set[str] = set()
    saw_rule = False
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("%version"):
            continue
        if line.startswith("%start"):
            start.update(line.split()[1:])
            continue
        match = _RULE_RE.match(line)
        if not match:
            raise FormatError(line_no, raw)
        lhs = match.group("lhs")
        weight = float(match.group("weight") or 1.0)
        rhs = match.group("rhs").split()
        saw_rule = True
        if len(rhs) == 1 and rhs[0].startswith("'") and rhs[0].endswith("'"):
            lexical.append((lhs, rhs[0][1:-1], weight))
        elif len(rhs) == 2 and all(re.match(r"[A-Z][A-Z0-9$]*$", s) for s in rhs):
            binary.append((lhs, rhs[0], rhs[1], weight))
        else:
            raise NotCNF(line_no, raw)
    if not saw_rule:
        raise FormatError(0, "<empty grammar>")
    nonterminals = {lhs for lhs, *_ in binary} | {t for t, _, _ in lexical}
    nonterminals |= {r1 for _, r1, _, _ in binary} | {r2 for _, _, r2, _ in binary}
    if not start:
        start = {"S"}
    return Grammar(
        nonterminals=frozenset(nonterminals),
        binary=tuple(binary),
        lexical=tuple(lexical),
        start=frozenset(start),
    )


def load_grammar(path) -> Grammar:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_grammar(handle.read())


@dataclass(frozen=True)
class ParseTree:
    tag: str
    start: int
    end: int
    weight: float
    word: str | None = None
    children: tuple["ParseTree", ...] = ()

    @property
    def is_leaf(self) -> bool:
        return self.word is not None

    def words(self) -> list[str]:
        if self.is_leaf:
            return [self.word]
        return [w for child in self.children for w in child.words()]

    def structure_key(self) -> tuple:
        """Deterministic tie-break: preorder (start, end, split, tag) tuples;
        smaller splits (leftmost-lowest) sort first."""
        if self.is_leaf:
            return ((self.start, self.end, self.start, self.tag),)
        split = self.children[0].end
        head = ((self.start, self.end, split, self.tag),)
        for child in self.children:
            head += child.structure_key()
        return head

    def bracketed(self) -> str:
        if self.is_leaf:
            return f"({self.tag} {self.word})"
        inner = " ".join(child.bracketed() for child in self.children)
        return f"({self.tag} {inner})"


def tree_sort_key(tree: ParseTree) -> tuple:
    return (-tree.weight, tree.structure_key())


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    cleaned = re.sub(r"[.,!?;:'\"()]", " ", text.lower())
    return cleaned.split()


def cyk_parse(sentence: Sequence[str], grammar: Grammar, k: int = 1) -> list[ParseTree]:
    """Up to k best parses rooted at a start symbol, highest weight first.

    Per-cell k-best lists are exact for additive weights (combining children's
    k-best lists is monotone), so the k=1 result heads every longer list.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not sentence:
        raise ValueError("empty sentence")
    unknown = sorted({w for w in sentence if w not in grammar.vocabulary})
    if unknown:
        raise OutOfVocabulary(unknown)

    n = len(sentence)
    chart: dict[tuple[int, int], dict[str, list[ParseTree]]] = {}
    for i, word in enumerate(sentence):
        cell: dict[str, list[ParseTree]] = {}
        for tag, weight in grammar.lexical_tags(word):
            tree = ParseTree(tag, i, i + 1, weight, word=word)
            cell.setdefault(tag, []).append(tree)
        for tag in cell:
            cell[tag] = sorted(cell[tag], key=tree_sort_key)[:k]
        chart[(i, i + 1)] = cell

    for span in range(2, n + 1):
        for start in range(0, n - span + 1):
            end = start + span
            cell = {}
            for split in range(start + 1, end):
                left_cell = chart[(start, split)]
                right_cell = chart[(split, end)]
                for lhs, rhs1, rhs2, weight in grammar.binary:
                    for left in left_cell.get(rhs1, ()):
                        for right in right_cell.get(rhs2, ()):
                            tree = ParseTree(
                                lhs,
                                start,
                                end,
                                weight + left.weight + right.weight,
                                children=(left, right),
                            )
                            cell.setdefault(lhs, []).append(tree)
            for tag in cell:
                cell[tag] = sorted(cell[tag], key=tree_sort_key)[:k]
            chart[(start, end)] = cell

    roots: list[ParseTree] = []
    for tag in sorted(grammar.start):
        roots.extend(chart[(0, n)].get(tag, ()))
    return sorted(roots, key=tree_sort_key)[:k]


_SENTENCE_SPLIT = re.compile(r"[.;!?]+")
_THEN_SPLIT = re.compile(r",?\s*\b(?:and\s+)?then\b\s+")


def split_instruction(text: str) -> list[str]:
    """Split on sentence punctuation and ', then' / 'and then' connectives."""
    out: list[str] = []
    for chunk in _SENTENCE_SPLIT.split(text):
        for piece in _THEN_SPLIT.split(chunk):
            piece = piece.strip().strip(",")
            if piece:
                out.append(piece)
    return out


def parse_bracketed(text: str) -> ParseTree:
    """Read a bracketed tree string back into a ParseTree (weights zeroed)."""
    tokens = re.findall(r"\(|\)|[^\s()]+", text)
    pos = 0

    def parse_node(word_index: int) -> tuple[ParseTree, int]:
        nonlocal pos
        if tokens[pos] != "(":
            raise ValueError(f"expected '(' at token {pos}")
        pos += 1
        tag = tokens[pos]
        pos += 1
        if tokens[pos] == "(":
            children = []
            start = word_index
            while tokens[pos] == "(":
                child, word_index = parse_node(word_index)
                children.append(child)
            if tokens[pos] != ")":
                raise ValueError("expected ')'")
            pos += 1
            return (
                ParseTree(tag, start, word_index, 0.0, children=tuple(children)),
                word_index,
            )
        word = tokens[pos]
        pos += 1
        if tokens[pos] != ")":
            raise ValueError("expected ')' after leaf")
        pos += 1
        return ParseTree(tag, word_index, word_index + 1, 0.0, word=word), word_index + 1

    tree, _ = parse_node(0)
    if pos != len(tokens):
        raise ValueError("trailing tokens in bracketed tree")
    return tree

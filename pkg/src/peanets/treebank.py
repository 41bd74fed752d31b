"""Sentiment treebank parsing: s-expression phrase trees, one per line.

Grammar: ``(label token)`` for leaves, ``(label child child)`` for
internal nodes, whitespace-insensitive between elements.  Labels are
0-based fine-grained sentiment classes 0..4; class 2 is the neutral
band that the binary task skips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .errors import ConfigurationError

FINE_CLASSES = 5
UNKNOWN_TOKEN = "<unk>"


class TreeParseError(ValueError):
    """Rejected input; ``position`` is the character index of the problem."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


@dataclass(frozen=True)
class SentimentTree:
    """A phrase tree node: a labeled token leaf or two labeled subtrees."""

    label: int
    token: str | None = None
    children: tuple | None = None

    def __post_init__(self):
        if self.label < 0:
            raise ConfigurationError(f"label must be >= 0, got {self.label}")
        has_token = self.token is not None
        has_children = self.children is not None
        if has_token == has_children:
            raise ConfigurationError("node needs exactly one of token or children")
        if has_children and len(self.children) != 2:
            raise ConfigurationError(
                f"internal node needs exactly two children, got {len(self.children)}"
            )

    @property
    def is_leaf(self) -> bool:
        return self.token is not None

    def nodes(self):
        """Preorder iterator over every node."""
        yield self
        if self.children is not None:
            for child in self.children:
                yield from child.nodes()

    def leaves(self):
        return [node for node in self.nodes() if node.is_leaf]

    def serialize(self) -> str:
        if self.is_leaf:
            return f"({self.label} {self.token})"
        left, right = self.children
        return f"({self.label} {left.serialize()} {right.serialize()})"


def _skip_ws(line: str, pos: int) -> int:
    while pos < len(line) and line[pos].isspace():
        pos += 1
    return pos


def _parse_label(line: str, pos: int):
    start = pos
    if pos < len(line) and line[pos] == "-":
        pos += 1
    while pos < len(line) and line[pos].isdigit():
        pos += 1
    if pos == start or (pos == start + 1 and line[start] == "-"):
        raise TreeParseError("non-integer label", start)
    return int(line[start:pos]), pos


def _parse_token(line: str, pos: int):
    start = pos
    while pos < len(line) and not line[pos].isspace() and line[pos] not in "()":
        pos += 1
    if pos == start:
        raise TreeParseError("expected a token or subtree", start)
    return line[start:pos], pos


def _parse_node(line: str, pos: int, max_label: int):
    pos = _skip_ws(line, pos)
    if pos >= len(line):
        raise TreeParseError("unbalanced", pos)
    if line[pos] != "(":
        raise TreeParseError("expected '('", pos)
    pos = _skip_ws(line, pos + 1)
    label, pos = _parse_label(line, pos)
    if label < 0 or label >= max_label:
        raise TreeParseError(f"label {label} outside 0..{max_label - 1}", pos - 1)
    pos = _skip_ws(line, pos)
    if pos >= len(line):
        raise TreeParseError("unbalanced", pos)

    if line[pos] == "(":
        left, pos = _parse_node(line, pos, max_label)
        pos = _skip_ws(line, pos)
        if pos >= len(line):
            raise TreeParseError("unbalanced", pos)
        if line[pos] == ")":
            raise TreeParseError("bad arity: internal node needs two subtrees", pos)
        right, pos = _parse_node(line, pos, max_label)
        node = SentimentTree(label, children=(left, right))
    elif line[pos] == ")":
        raise TreeParseError("bad arity: node needs a token or two subtrees", pos)
    else:
        token, pos = _parse_token(line, pos)
        node = SentimentTree(label, token=token)

    pos = _skip_ws(line, pos)
    if pos >= len(line):
        raise TreeParseError("unbalanced", pos)
    if line[pos] != ")":
        raise TreeParseError("bad arity: too many elements in node", pos)
    return node, pos + 1


def parse_tree(line: str, max_label: int = FINE_CLASSES) -> SentimentTree:
    """Parse one complete s-expression tree; rejections carry a position."""
    tree, pos = _parse_node(line, 0, max_label)
    pos = _skip_ws(line, pos)
    if pos != len(line):
        raise TreeParseError("trailing garbage", pos)
    return tree


def load_trees(path, max_label: int = FINE_CLASSES) -> list:
    """One tree per non-blank line of a UTF-8 text file."""
    trees = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                trees.append(parse_tree(line, max_label))
    return trees


@dataclass
class Vocabulary:
    """Token index map with a reserved unknown slot at index 0."""

    token_to_index: dict
    index_to_token: list

    unknown_index = 0

    def lookup(self, token: str) -> int:
        return self.token_to_index.get(token, self.unknown_index)

    def __len__(self) -> int:
        return len(self.index_to_token)

    def to_json(self) -> str:
        return json.dumps({"tokens": self.index_to_token[1:]}, ensure_ascii=False)

    @classmethod
    def from_tokens(cls, tokens) -> "Vocabulary":
        index_to_token = [UNKNOWN_TOKEN]
        token_to_index = {}
        for token in tokens:
            if token not in token_to_index and token != UNKNOWN_TOKEN:
                token_to_index[token] = len(index_to_token)
                index_to_token.append(token)
        return cls(token_to_index, index_to_token)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        return cls.from_tokens(json.loads(text)["tokens"])


def build_vocabulary(trees, min_count: int = 1) -> Vocabulary:
    """Index tokens seen at least min_count times, in first-seen order."""
    if not trees:
        raise ValueError("need at least one tree to build a vocabulary")
    counts: dict = {}
    for tree in trees:
        for leaf in tree.leaves():
            counts[leaf.token] = counts.get(leaf.token, 0) + 1
    return Vocabulary.from_tokens(
        token for token, count in counts.items() if count >= min_count
    )


class Polarity(Enum):
    NEG = "neg"
    POS = "pos"
    NEUTRAL_SKIP = "neutral-skip"


def root_and_binary_labels(tree: SentimentTree):
    """Fine root label plus its binary collapse; class 2 is skipped."""
    fine = tree.label
    if not 0 <= fine < FINE_CLASSES:
        raise ValueError(f"fine label {fine} outside 0..{FINE_CLASSES - 1}")
    if fine <= 1:
        return fine, Polarity.NEG
    if fine >= 3:
        return fine, Polarity.POS
    return fine, Polarity.NEUTRAL_SKIP

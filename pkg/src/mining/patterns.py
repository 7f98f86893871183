# /src/mining/patterns.py
"""
Canonical string encoding of rooted, unordered, labeled trees.

A node renders as its label, then each child's rendering followed by the pop token `^`.
Children are ordered by their token sequences, with `^` sorting after every label, so
"Rain Accident Congestion ^ ^" is the chain Rain -> Accident -> Congestion.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from ..core.errors import DataError
from ..core.models import kind_of_label, EntityKind

logger = logging.getLogger(__name__)

POP = "^"

# (label, children)
Node = Tuple[str, Tuple["Node", ...]]


def token_key(tokens: Sequence[str]) -> Tuple[Tuple[int, str], ...]:
    return tuple((1, "") if tok == POP else (0, tok) for tok in tokens)


def _tokens(node: Node, canonical: bool) -> List[str]:
    label, children = node
    blocks = [_tokens(child, canonical) + [POP] for child in children]
    if canonical:
        blocks.sort(key=token_key)
    out = [label]
    for block in blocks:
        out.extend(block)
    return out


def canonical_tokens(node: Node) -> List[str]:
    return _tokens(node, canonical=True)


def encode(node: Node) -> str:
    return " ".join(canonical_tokens(node))


def is_canonical_order(node: Node) -> bool:
    """True when the children as given are already in canonical order at every node."""
    return _tokens(node, canonical=False) == _tokens(node, canonical=True)


def decode(encoding: str) -> Node:
    tokens = encoding.split()
    if not tokens or tokens[0] == POP:
        raise DataError(f"Malformed pattern encoding: '{encoding}'")
    # stack of (label, children list)
    stack: List[Tuple[str, list]] = [(tokens[0], [])]
    for tok in tokens[1:]:
        if tok == POP:
            if len(stack) < 2:
                raise DataError(f"Unbalanced pop in pattern encoding: '{encoding}'")
            label, kids = stack.pop()
            stack[-1][1].append((label, tuple(kids)))
        else:
            stack.append((tok, []))
    if len(stack) != 1:
        raise DataError(f"Unterminated pattern encoding: '{encoding}'")
    label, kids = stack[0]
    return (label, tuple(kids))


def from_preorder(nodes: Sequence[Tuple[str, int]]) -> Node:
    """Builds a tree from (label, depth) pairs in preorder, keeping child order as given."""
    root_label, root_depth = nodes[0]
    if root_depth != 0:
        raise DataError("Preorder node list must start at depth 0")
    stack: List[Tuple[str, list]] = [(root_label, [])]
    for label, depth in nodes[1:]:
        while len(stack) > depth:
            done_label, kids = stack.pop()
            stack[-1][1].append((done_label, tuple(kids)))
        stack.append((label, []))
    while len(stack) > 1:
        done_label, kids = stack.pop()
        stack[-1][1].append((done_label, tuple(kids)))
    return (stack[0][0], tuple(stack[0][1]))


def node_count(node: Node) -> int:
    return 1 + sum(node_count(c) for c in node[1])


@dataclass(frozen=True, order=True)
class TreePattern:
    encoding: str
    node_count: int

    @classmethod
    def from_tree(cls, node: Node) -> "TreePattern":
        return cls(encode(node), node_count(node))

    @classmethod
    def from_encoding(cls, encoding: str) -> "TreePattern":
        """Parses and re-canonicalizes an encoding."""
        return cls.from_tree(decode(encoding))

    def tree(self) -> Node:
        return decode(self.encoding)

    @property
    def root_label(self) -> str:
        return self.encoding.split(" ", 1)[0]

    @property
    def labels(self) -> List[str]:
        return [tok for tok in self.encoding.split() if tok != POP]

    @property
    def weather_initiated(self) -> bool:
        return kind_of_label(self.root_label) == EntityKind.WEATHER

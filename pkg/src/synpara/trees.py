"""Constituency trees: bracketed I/O, terminal stripping, height pruning,
leaf queues, word-span signalling vectors and ordered tree edit distance.

Trees are immutable, so every transformation returns a new tree and all
functions here are safe to call concurrently.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class TreeParseError(ValueError):
    """Malformed bracketed tree text; ``offset`` is the character index."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Tree:
    """One node of an ordered labeled tree.

    A node carries a ``token`` exactly when it has no children; such
    nodes are the terminal words of a full parse.  Skeletons (trees with
    terminals removed) consist purely of token-less nodes, with the
    former preterminal tags as leaves.
    """

    label: str
    children: tuple["Tree", ...] = ()
    token: str | None = None

    def __post_init__(self):
        if self.token is not None and self.children:
            raise ValueError(f"node {self.label!r} has both a token and children")

    @property
    def is_terminal(self) -> bool:
        return self.token is not None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def terminals(self) -> list[str]:
        """Terminal tokens, left to right."""
        if self.token is not None:
            return [self.token]
        collected: list[str] = []

        def walk(node: "Tree") -> None:
            for child in node.children:
                if child.token is not None:
                    collected.append(child.token)
                else:
                    walk(child)

        walk(self)
        return collected

    def node_count(self) -> int:
        return 1 + sum(c.node_count() for c in self.children)

    def __str__(self) -> str:
        return serialize(self)


@dataclass(frozen=True)
class PrunedTree:
    """A skeleton cut at ``height_used`` levels (root at level 1)."""

    skeleton: Tree
    height_used: int


@dataclass(frozen=True)
class SignallingVector:
    """Per-word transition bits plus the word span owned by each queue leaf.

    ``bits[i]`` is 1 exactly when word i+1 starts a new span, so the
    number of 1-bits equals the number of spans and the spans cover
    positions 1..T contiguously and in order.
    """

    bits: tuple[int, ...]
    spans: tuple[tuple[int, int], ...]


def parse_bracketed(text: str) -> Tree:
    """Parse a single Penn-Treebank-style bracketed expression.

    Raises :class:`TreeParseError` with the failing character offset on
    unbalanced brackets, an empty label, stray text or multiple roots.
    """
    n = len(text)
    pos = 0

    def skip_ws(i: int) -> int:
        while i < n and text[i].isspace():
            i += 1
        return i

    def read_atom(i: int) -> tuple[str, int]:
        start = i
        while i < n and not text[i].isspace() and text[i] not in "()":
            i += 1
        return text[start:i], i

    def parse_node(i: int) -> tuple[Tree, int]:
        assert text[i] == "("
        i = skip_ws(i + 1)
        label, i = read_atom(i)
        if not label:
            raise TreeParseError("empty node label", i)
        children: list[Tree] = []
        while True:
            i = skip_ws(i)
            if i >= n:
                raise TreeParseError("unbalanced brackets: missing ')'", i)
            ch = text[i]
            if ch == ")":
                return Tree(label, tuple(children)), i + 1
            if ch == "(":
                child, i = parse_node(i)
                children.append(child)
            else:
                word, i = read_atom(i)
                children.append(Tree(word, token=word))

    pos = skip_ws(pos)
    if pos >= n or text[pos] != "(":
        raise TreeParseError("expected '('", pos)
    root, pos = parse_node(pos)
    pos = skip_ws(pos)
    if pos < n:
        raise TreeParseError("trailing text after the root tree", pos)
    return root


def serialize(tree: Tree) -> str:
    """Canonical bracketed form; inverse of :func:`parse_bracketed`."""
    if tree.token is not None:
        return tree.token
    if not tree.children:
        return f"({tree.label})"
    inner = " ".join(serialize(c) for c in tree.children)
    return f"({tree.label} {inner})"


def normalize_bracketed(text: str) -> str:
    """Whitespace-normalize bracketed text to the :func:`serialize` form."""
    s = re.sub(r"\s+", " ", text.strip())
    s = re.sub(r"\(\s+", "(", s)
    s = re.sub(r"\s+\)", ")", s)
    s = re.sub(r"([^\s(])\(", r"\1 (", s)
    s = re.sub(r"\)\(", ") (", s)
    return s


def strip_terminals(tree: Tree) -> Tree:
    """Remove every token-bearing node; preterminal tags become leaves.

    Idempotent: applying it to a skeleton returns an equal skeleton.
    """
    if tree.token is not None:
        raise ValueError("cannot strip a bare terminal node")
    kept = tuple(strip_terminals(c) for c in tree.children if c.token is None)
    return Tree(tree.label, kept)


def height(tree: Tree) -> int:
    """Number of nodes on the longest root-to-leaf path (single node: 1)."""
    if not tree.children:
        return 1
    return 1 + max(height(c) for c in tree.children)


def prune(skeleton: Tree, h: int) -> PrunedTree:
    """Drop all nodes deeper than ``h`` levels (root at level 1)."""
    if h < 1:
        raise ValueError(f"prune height must be >= 1, got {h}")

    def cut(node: Tree, depth: int) -> Tree:
        if depth == h or not node.children:
            return Tree(node.label)
        return Tree(node.label, tuple(cut(c, depth + 1) for c in node.children))

    return PrunedTree(cut(skeleton, 1), h)


def leaf_queue(pruned: PrunedTree) -> list[Tree]:
    """Leaves of the pruned skeleton in left-to-right order."""
    out: list[Tree] = []

    def walk(node: Tree) -> None:
        if not node.children:
            out.append(node)
        else:
            for c in node.children:
                walk(c)

    walk(pruned.skeleton)
    return out


def leaf_spans(full: Tree, h: int) -> SignallingVector:
    """Word spans owned by each leaf of the tree pruned at ``h``.

    ``full`` must carry terminal tokens.  Each leaf of the pruned
    skeleton dominates a contiguous range of word positions in the full
    tree; the returned bits flag the first position of every range.
    """
    if h < 1:
        raise ValueError(f"prune height must be >= 1, got {h}")
    total = len(full.terminals())
    if total == 0:
        raise ValueError("tree carries no terminal tokens")

    spans: list[tuple[int, int]] = []
    cursor = 0  # words consumed so far

    def words_below(node: Tree) -> int:
        if node.token is not None:
            return 1
        return sum(words_below(c) for c in node.children)

    def walk(node: Tree, depth: int) -> None:
        nonlocal cursor
        structural = [c for c in node.children if c.token is None]
        if depth == h or not structural:
            size = words_below(node)
            spans.append((cursor + 1, cursor + size))
            cursor += size
            return
        consumed_tokens = sum(1 for c in node.children if c.token is not None)
        if consumed_tokens and structural:
            # mixed preterminal/phrase children do not occur in treebank
            # output; treat the whole node as one span to stay total
            size = words_below(node)
            spans.append((cursor + 1, cursor + size))
            cursor += size
            return
        for c in structural:
            walk(c, depth + 1)

    walk(full, 1)
    bits = [0] * total
    for start, _ in spans:
        bits[start - 1] = 1
    return SignallingVector(tuple(bits), tuple(spans))


def read_tree_file(path) -> list[Tree]:
    """One bracketed tree per line, aligned with its sentence file."""
    trees = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                trees.append(parse_bracketed(line))
            except TreeParseError as exc:
                raise TreeParseError(f"line {lineno}: {exc}", exc.offset) from exc
    return trees


def write_tree_file(path, trees) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trees:
            fh.write(serialize(t) + "\n")


# --- ordered tree edit distance (unit costs) ---------------------------------


def _annotate(tree: Tree) -> tuple[list[str], list[int], list[int]]:
    """Postorder labels, leftmost-leaf-descendant indices and keyroots."""
    labels: list[str] = []
    lmds: list[int] = []

    def walk(node: Tree) -> int:
        if not node.children:
            labels.append(node.label)
            lmds.append(len(labels) - 1)
            return lmds[-1]
        first = None
        for c in node.children:
            lmd_c = walk(c)
            if first is None:
                first = lmd_c
        labels.append(node.label)
        lmds.append(first)
        return first

    walk(tree)
    last_for_lmd: dict[int, int] = {}
    for i, lmd in enumerate(lmds):
        last_for_lmd[lmd] = i
    keyroots = sorted(last_for_lmd.values())
    return labels, lmds, keyroots


def ted(a: Tree, b: Tree) -> int:
    """Minimum number of node inserts, deletes and relabels turning ``a``
    into ``b``, for ordered labeled trees (unit cost per operation).

    Intended for skeletons: comparing full parses of different sentences
    would mix lexical differences into the syntactic distance.
    """
    la, lmda, kra = _annotate(a)
    lb, lmdb, krb = _annotate(b)
    return _ted_annotated((la, lmda, kra), (lb, lmdb, krb))


def _ted_annotated(annot_a, annot_b) -> int:
    """Distance from precomputed annotations (see :func:`_annotate`)."""
    la, lmda, kra = annot_a
    lb, lmdb, krb = annot_b
    n, m = len(la), len(lb)
    td = [[0] * m for _ in range(n)]

    for i in kra:
        li = lmda[i]
        ioff = li - 1
        rows = i - li + 2
        for j in krb:
            lj = lmdb[j]
            joff = lj - 1
            cols = j - lj + 2
            fd = [[0] * cols for _ in range(rows)]
            for x in range(1, rows):
                fd[x][0] = fd[x - 1][0] + 1
            for y in range(1, cols):
                fd[0][y] = fd[0][y - 1] + 1
            for x in range(1, rows):
                fdx = fd[x]
                fdx1 = fd[x - 1]
                lax = lmda[x + ioff]
                both_trees = lax == li
                for y in range(1, cols):
                    if both_trees and lmdb[y + joff] == lj:
                        cost = 0 if la[x + ioff] == lb[y + joff] else 1
                        d = min(fdx1[y] + 1, fdx[y - 1] + 1, fdx1[y - 1] + cost)
                        fdx[y] = d
                        td[x + ioff][y + joff] = d
                    else:
                        p = lax - 1 - ioff
                        q = lmdb[y + joff] - 1 - joff
                        fdx[y] = min(
                            fdx1[y] + 1,
                            fdx[y - 1] + 1,
                            fd[p][q] + td[x + ioff][y + joff],
                        )
    return td[n - 1][m - 1]

import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synpara import trees
from synpara.trees import (
    PrunedTree,
    Tree,
    TreeParseError,
    height,
    leaf_queue,
    leaf_spans,
    normalize_bracketed,
    parse_bracketed,
    prune,
    serialize,
    strip_terminals,
    ted,
)

from conftest import QUESTION_TREE_TEXT, random_tree


# --- parsing and serialization ------------------------------------------------


def test_parse_simple_tree():
    t = parse_bracketed("(ROOT (NP (DT the) (NN cat)))")
    assert t.label == "ROOT"
    (np_node,) = t.children
    assert np_node.label == "NP"
    dt, nn = np_node.children
    assert dt.label == "DT" and dt.children[0].token == "the"
    assert nn.label == "NN" and nn.children[0].token == "cat"


def test_parse_serialize_round_trip():
    s = "(ROOT (NP (DT the) (NN cat)))"
    assert serialize(parse_bracketed(s)) == s


def test_round_trip_modulo_whitespace():
    messy = "( ROOT ( NP (DT   the)\n  (NN cat) ) )"
    assert serialize(parse_bracketed(messy)) == normalize_bracketed(messy)


def test_parse_error_offset():
    with pytest.raises(TreeParseError) as exc:
        parse_bracketed("(A (B")
    assert exc.value.offset == 5


def test_parse_error_empty_label():
    with pytest.raises(TreeParseError):
        parse_bracketed("(())")


def test_parse_error_multiple_roots():
    with pytest.raises(TreeParseError) as exc:
        parse_bracketed("(A)(B)")
    assert exc.value.offset == 3


def test_parse_error_no_open():
    with pytest.raises(TreeParseError):
        parse_bracketed("hello")


def test_terminal_nodes_have_no_children():
    with pytest.raises(ValueError):
        Tree("X", (Tree("Y"),), token="bad")


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_tree_round_trip(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, 12, ["A", "B", "C"], with_tokens=True)
    assert parse_bracketed(serialize(t)) == t


# --- stripping, height, pruning -----------------------------------------------


def test_strip_terminals_basic():
    t = parse_bracketed("(ROOT (NP (DT the) (NN cat)))")
    skel = strip_terminals(t)
    assert serialize(skel) == "(ROOT (NP (DT) (NN)))"


def test_strip_terminals_idempotent():
    t = parse_bracketed("(ROOT (NP (DT the) (NN cat)))")
    skel = strip_terminals(t)
    assert strip_terminals(skel) == skel


def test_strip_question_tree_matches_pruned_leaves(question_tree):
    skel = strip_terminals(question_tree)
    leaves = leaf_queue(prune(skel, 3))
    assert [n.label for n in leaves] == ["WP", "VBZ", "NP", "<DOT>"]


def test_height_single_node():
    assert height(Tree("X")) == 1


def test_height_small_skeleton():
    skel = strip_terminals(parse_bracketed("(ROOT (NP (DT the) (NN cat)))"))
    assert height(skel) == 3


def test_height_pruned_question_tree(question_tree):
    skel = strip_terminals(question_tree)
    assert height(prune(skel, 3).skeleton) == 3


def test_prune_noop_at_full_height():
    skel = strip_terminals(parse_bracketed(QUESTION_TREE_TEXT))
    assert prune(skel, height(skel)).skeleton == skel


def test_prune_to_root():
    skel = strip_terminals(parse_bracketed(QUESTION_TREE_TEXT))
    assert prune(skel, 1).skeleton == Tree("SBARQ")


def test_prune_rejects_bad_height():
    with pytest.raises(ValueError):
        prune(Tree("A"), 0)


def _leaf_coverage(skel, h):
    """For each pruned leaf, the contiguous range of unpruned-skeleton leaf
    positions it dominates, via an independent counting traversal."""
    ranges = []
    counter = [0]

    def full_leaves(node):
        if not node.children:
            return 1
        return sum(full_leaves(c) for c in node.children)

    def walk(node, depth):
        if depth == h or not node.children:
            size = full_leaves(node)
            ranges.append((counter[0], counter[0] + size - 1))
            counter[0] += size
            return
        for c in node.children:
            walk(c, depth + 1)

    walk(skel, 1)
    return ranges


def test_prune_height_bound_and_monotone_leaves():
    rng = np.random.default_rng(7)
    for _ in range(100):
        skel = random_tree(rng, 14, ["S", "NP", "VP", "DT", "NN"])
        hmax = height(skel)
        for h in range(1, hmax + 2):
            cut = prune(skel, h).skeleton
            assert height(cut) <= min(h, hmax)
        # surviving leaves keep their left-to-right order as depth grows:
        # each leaf range at height h is the union of consecutive ranges
        # at h+1, in order
        for h in range(1, hmax):
            shallow = _leaf_coverage(skel, h)
            deep = _leaf_coverage(skel, h + 1)
            assert len(shallow) <= len(deep)
            j = 0
            for lo, hi in shallow:
                assert deep[j][0] == lo
                while deep[j][1] < hi:
                    nxt = deep[j + 1]
                    assert nxt[0] == deep[j][1] + 1
                    j += 1
                assert deep[j][1] == hi
                j += 1
            assert j == len(deep)


# --- leaf queue ----------------------------------------------------------------


def test_leaf_queue_question_tree(question_tree):
    q = leaf_queue(prune(strip_terminals(question_tree), 3))
    assert [n.label for n in q] == ["WP", "VBZ", "NP", "<DOT>"]


def test_leaf_queue_root_only():
    assert [n.label for n in leaf_queue(PrunedTree(Tree("S"), 1))] == ["S"]


def _leaves_by_recursion(node):
    # independent traversal: collect leaves via explicit stack, right-to-left
    out = []
    stack = [node]
    while stack:
        cur = stack.pop()
        if not cur.children:
            out.append(cur.label)
        else:
            stack.extend(reversed(cur.children))
    return out


def test_leaf_queue_matches_independent_traversal():
    rng = np.random.default_rng(11)
    for _ in range(100):
        skel = random_tree(rng, 16, ["A", "B", "C", "D"])
        for h in range(1, height(skel) + 1):
            p = prune(skel, h)
            assert [n.label for n in leaf_queue(p)] == _leaves_by_recursion(p.skeleton)


# --- signalling vector ----------------------------------------------------------


def test_leaf_spans_question_tree(question_tree):
    sv = leaf_spans(question_tree, 3)
    assert sv.bits == (1, 1, 1, 0, 0, 0, 0, 0, 1)
    assert sv.spans == ((1, 1), (2, 2), (3, 8), (9, 9))


def test_leaf_spans_full_height_all_ones(question_tree):
    sv = leaf_spans(question_tree, height(strip_terminals(question_tree)))
    assert sv.bits == (1,) * 9


def test_leaf_spans_root_single_span(question_tree):
    sv = leaf_spans(question_tree, 1)
    assert sv.bits == (1,) + (0,) * 8
    assert sv.spans == ((1, 9),)


def test_leaf_spans_invariants_random():
    rng = np.random.default_rng(3)
    for _ in range(200):
        full = random_tree(rng, 12, ["S", "NP", "VP", "PP"], with_tokens=True)
        total = len(full.terminals())
        hmax = height(strip_terminals(full))
        h = int(rng.integers(1, hmax + 2))
        sv = leaf_spans(full, h)
        queue = leaf_queue(prune(strip_terminals(full), h))
        assert sum(sv.bits) == len(queue) == len(sv.spans)
        assert sv.bits[0] == 1
        covered = [pos for a, b in sv.spans for pos in range(a, b + 1)]
        assert covered == list(range(1, total + 1))


# --- tree edit distance ---------------------------------------------------------


def _tree_size(t):
    return 1 + sum(_tree_size(c) for c in t.children)


def _forest_key(forest):
    return tuple(serialize(t) for t in forest)


@functools.lru_cache(maxsize=None)
def _forest_dist_cached(key_a, key_b):
    a = [parse_bracketed(s) for s in key_a]
    b = [parse_bracketed(s) for s in key_b]
    return _forest_dist(a, b)


def _forest_dist(fa, fb):
    """Exhaustive edit-script search over ordered forests, unit costs.

    Explores every interleaving of delete-root / insert-root / match-root
    decisions; exponential, usable only for tiny trees.  Serves as the
    independent oracle for the dynamic-programming implementation.
    """
    if not fa:
        return sum(_tree_size(t) for t in fb)
    if not fb:
        return sum(_tree_size(t) for t in fa)
    t1, rest1 = fa[0], list(fa[1:])
    t2, rest2 = fb[0], list(fb[1:])
    delete = 1 + _forest_dist_cached(
        _forest_key(list(t1.children) + rest1), _forest_key(fb)
    )
    insert = 1 + _forest_dist_cached(
        _forest_key(fa), _forest_key(list(t2.children) + rest2)
    )
    relabel = 0 if t1.label == t2.label else 1
    match = (
        relabel
        + _forest_dist_cached(_forest_key(t1.children), _forest_key(t2.children))
        + _forest_dist_cached(_forest_key(rest1), _forest_key(rest2))
    )
    return min(delete, insert, match)


def ted_oracle(a, b):
    return _forest_dist_cached(_forest_key([a]), _forest_key([b]))


def test_ted_identity():
    rng = np.random.default_rng(5)
    for _ in range(20):
        t = random_tree(rng, 10, ["A", "B", "C"])
        assert ted(t, t) == 0


def test_ted_single_relabel():
    assert ted(Tree("A"), Tree("B")) == 1
    assert ted(Tree("A"), Tree("A")) == 0


def test_ted_known_values():
    a = parse_bracketed("(F (D (A) (C (B))) (E))")
    b = parse_bracketed("(F (C (D (A) (B))) (E))")
    assert ted(a, b) == 2  # classic example: move C above D costs 2
    assert ted(parse_bracketed("(A (B) (C))"), parse_bracketed("(A (B))")) == 1
    assert ted(parse_bracketed("(A (B) (C))"), parse_bracketed("(A (C) (B))")) == 2


def test_ted_matches_oracle_small_random():
    rng = np.random.default_rng(13)
    for _ in range(300):
        a = random_tree(rng, 5, ["A", "B", "C"])
        b = random_tree(rng, 5, ["A", "B", "C"])
        assert ted(a, b) == ted_oracle(a, b)


def test_ted_symmetric_and_triangle():
    rng = np.random.default_rng(17)
    for _ in range(100):
        a = random_tree(rng, 8, ["A", "B"])
        b = random_tree(rng, 8, ["A", "B"])
        c = random_tree(rng, 8, ["A", "B"])
        assert ted(a, b) == ted(b, a)
        assert ted(a, b) <= ted(a, c) + ted(c, b)


def test_ted_zero_iff_equal():
    rng = np.random.default_rng(19)
    for _ in range(200):
        a = random_tree(rng, 6, ["A", "B"])
        b = random_tree(rng, 6, ["A", "B"])
        assert (ted(a, b) == 0) == (a == b)


def test_ted_relabeling_invariance():
    # joint label bijections leave the distance unchanged; this licenses
    # the canonical-pair reduction used by the acceptance enumeration
    rng = np.random.default_rng(23)
    mapping = {"A": "X", "B": "Y", "C": "Z"}

    def relabel(t):
        return Tree(mapping[t.label], tuple(relabel(c) for c in t.children))

    for _ in range(100):
        a = random_tree(rng, 6, ["A", "B", "C"])
        b = random_tree(rng, 6, ["A", "B", "C"])
        assert ted(a, b) == ted(relabel(a), relabel(b))


# --- file I/O -------------------------------------------------------------------


def test_tree_file_round_trip(tmp_path):
    rng = np.random.default_rng(29)
    batch = [random_tree(rng, 10, ["S", "NP"], with_tokens=True) for _ in range(8)]
    path = tmp_path / "trees.txt"
    trees.write_tree_file(path, batch)
    assert trees.read_tree_file(path) == batch


def test_tree_file_reports_bad_line(tmp_path):
    path = tmp_path / "trees.txt"
    path.write_text("(A (B x))\n(C (\n", encoding="utf-8")
    with pytest.raises(TreeParseError, match="line 2"):
        trees.read_tree_file(path)

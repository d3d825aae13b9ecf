"""Evaluation-triple construction from paraphrase pairs.

For each held-out pair (X, Z) the exemplar Y is picked from the pool of
held-out sentences: candidates must match Z's length within two words,
must not be too similar to X (sentence BLEU above 0.6 drops them), and
the survivor with the smallest skeleton edit distance to Z's parse wins,
ties going to the earliest sentence in corpus order.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DataError
from .metrics import EvalTriple, bleu
from .textproc import tokenize
from .trees import Tree, parse_bracketed, serialize, strip_terminals, ted

MAX_PAIR_TOKENS = 30
LENGTH_WINDOW = 2
BLEU_CUTOFF = 0.6


@dataclass(frozen=True)
class SentencePair:
    source: str
    target: str
    source_tree: Tree
    target_tree: Tree


def exceeds_bleu_cutoff(value: float, cutoff: float = BLEU_CUTOFF) -> bool:
    """Strictly above the cutoff drops the candidate; equal keeps it."""
    return value > cutoff


def load_pair_corpus(pairs_path, trees_path, max_tokens: int = MAX_PAIR_TOKENS):
    """Read aligned pair and tree files; drops pairs longer than
    ``max_tokens`` words on either side.  Returns (pairs, dropped)."""
    with open(pairs_path, encoding="utf-8") as fh:
        pair_lines = [line.rstrip("\n") for line in fh if line.strip()]
    with open(trees_path, encoding="utf-8") as fh:
        tree_lines = [line.rstrip("\n") for line in fh if line.strip()]
    if len(pair_lines) != len(tree_lines):
        raise DataError(
            f"{pairs_path} has {len(pair_lines)} pairs but {trees_path} has "
            f"{len(tree_lines)} tree lines"
        )
    pairs: list[SentencePair] = []
    dropped = 0
    for lineno, (pline, tline) in enumerate(zip(pair_lines, tree_lines), start=1):
        pcols = pline.split("\t")
        tcols = tline.split("\t")
        if len(pcols) != 2:
            raise DataError(f"{pairs_path}:{lineno}: expected 2 columns, got {len(pcols)}")
        if len(tcols) != 2:
            raise DataError(f"{trees_path}:{lineno}: expected 2 trees, got {len(tcols)}")
        if len(tokenize(pcols[0])) > max_tokens or len(tokenize(pcols[1])) > max_tokens:
            dropped += 1
            continue
        pairs.append(
            SentencePair(pcols[0], pcols[1], parse_bracketed(tcols[0]), parse_bracketed(tcols[1]))
        )
    return pairs, dropped


def _sentence_pool(pairs):
    """Unique pool sentences with trees, in first-occurrence corpus order."""
    pool: list[tuple[str, Tree]] = []
    seen: set[str] = set()
    for pair in pairs:
        for sent, tree in ((pair.source, pair.source_tree), (pair.target, pair.target_tree)):
            if sent not in seen:
                seen.add(sent)
                pool.append((sent, tree))
    return pool


def build_eval_set(
    pairs,
    len_window: int = LENGTH_WINDOW,
    bleu_cutoff: float = BLEU_CUTOFF,
):
    """Pick an exemplar for every pair; returns (triples, skipped count).

    Pairs whose candidate set empties out after the two filters are
    skipped and counted.  Tree edit distances are memoized on skeleton
    serializations, since pool sentences recur across pairs.
    """
    if len(pairs) < 2:
        raise DataError("need at least two pairs to build an evaluation set")
    pool = _sentence_pool(pairs)
    skeleton_of = {sent: strip_terminals(tree) for sent, tree in pool}
    skeleton_key = {sent: serialize(skel) for sent, skel in skeleton_of.items()}
    token_count = {sent: len(tokenize(sent)) for sent, _ in pool}
    ted_memo: dict[tuple[str, str], int] = {}

    def skeleton_distance(a: str, b: str) -> int:
        key = (skeleton_key[a], skeleton_key[b])
        if key not in ted_memo:
            ted_memo[key] = ted(skeleton_of[a], skeleton_of[b])
        return ted_memo[key]

    triples: list[EvalTriple] = []
    skipped = 0
    tree_of = dict(pool)
    for pair in pairs:
        x, z = pair.source, pair.target
        x_tokens = tokenize(x)
        z_len = token_count.get(z, len(tokenize(z)))
        best_sent = None
        best_ted = None
        for sent, _tree in pool:
            if sent == x or sent == z:
                continue
            if abs(token_count[sent] - z_len) > len_window:
                continue
            if exceeds_bleu_cutoff(bleu(x_tokens, tokenize(sent)), bleu_cutoff):
                continue
            d = skeleton_distance(z, sent)
            if best_ted is None or d < best_ted:
                best_ted = d
                best_sent = sent
        if best_sent is None:
            skipped += 1
            continue
        triples.append(
            EvalTriple(
                source=x,
                exemplar=best_sent,
                reference=z,
                source_tree=pair.source_tree,
                exemplar_tree=tree_of[best_sent],
                reference_tree=pair.target_tree,
            )
        )
    if not triples:
        raise DataError("no pair survived exemplar selection")
    return triples, skipped


def split_eval_set(triples, test_n: int, val_n: int, rng):
    """Disjoint seeded-random (test, validation) split."""
    if test_n + val_n > len(triples):
        raise DataError(
            f"cannot split {len(triples)} triples into {test_n} test + {val_n} validation"
        )
    order = rng.permutation(len(triples)).tolist()
    test = [triples[i] for i in order[:test_n]]
    val = [triples[i] for i in order[test_n : test_n + val_n]]
    return test, val


def write_triples(triples, triples_path, trees_path) -> None:
    with open(triples_path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(f"{t.source}\t{t.exemplar}\t{t.reference}\n")
    with open(trees_path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(
                f"{serialize(t.source_tree)}\t{serialize(t.exemplar_tree)}\t"
                f"{serialize(t.reference_tree)}\n"
            )


def read_triples(triples_path, trees_path) -> list[EvalTriple]:
    with open(triples_path, encoding="utf-8") as fh:
        sent_lines = [line.rstrip("\n") for line in fh if line.strip()]
    with open(trees_path, encoding="utf-8") as fh:
        tree_lines = [line.rstrip("\n") for line in fh if line.strip()]
    if len(sent_lines) != len(tree_lines):
        raise DataError(
            f"{triples_path} has {len(sent_lines)} triples but {trees_path} has "
            f"{len(tree_lines)} tree lines"
        )
    triples = []
    for lineno, (sline, tline) in enumerate(zip(sent_lines, tree_lines), start=1):
        sents = sline.split("\t")
        trees_ = tline.split("\t")
        if len(sents) != 3 or len(trees_) != 3:
            raise DataError(f"{triples_path}:{lineno}: expected 3 columns in both files")
        triples.append(
            EvalTriple(
                sents[0], sents[1], sents[2],
                parse_bracketed(trees_[0]), parse_bracketed(trees_[1]), parse_bracketed(trees_[2]),
            )
        )
    return triples

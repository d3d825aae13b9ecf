from pathlib import Path

import numpy as np
import pytest

from synpara import trees

FIXTURES = Path(__file__).parent / "fixtures"

# Full parse of "what is the best language for deep learning ?", the
# question-shaped fixture used throughout: pruned at height 3 its leaves
# are WP, VBZ, NP and <DOT>, and the 9 words split into spans
# 1-1 / 2-2 / 3-8 / 9-9.
QUESTION_TREE_TEXT = (
    "(SBARQ (WHNP (WP what)) (SQ (VBZ is) (NP (NP (DT the) (JJS best) "
    "(NN language)) (PP (IN for) (NP (JJ deep) (NN learning))))) (<DOT> ?))"
)

QUESTION_SENTENCE = "what is the best language for deep learning ?"


@pytest.fixture
def question_tree() -> trees.Tree:
    return trees.parse_bracketed(QUESTION_TREE_TEXT)


def random_tree(rng: np.random.Generator, max_nodes: int, labels, with_tokens=False):
    """Random ordered labeled tree with 1..max_nodes structural nodes.

    With ``with_tokens`` every leaf gets a single terminal word child, so
    the result looks like a full parse over ``node-count`` words.
    """
    n_nodes = int(rng.integers(1, max_nodes + 1))
    nodes = [trees.Tree(str(rng.choice(labels)))]
    # grow by attaching each new node under a uniformly chosen existing one
    children: list[list] = [[]]
    for _ in range(n_nodes - 1):
        parent = int(rng.integers(0, len(nodes)))
        nodes.append(trees.Tree(str(rng.choice(labels))))
        children.append([])
        children[parent].append(len(nodes) - 1)

    words = iter(f"w{i}" for i in range(n_nodes))

    def build(i: int) -> trees.Tree:
        kids = tuple(build(j) for j in children[i])
        if not kids and with_tokens:
            word = next(words)
            kids = (trees.Tree(word, token=word),)
        return trees.Tree(nodes[i].label, kids)

    return build(0)


def load_toy_corpus():
    """The 32-pair fixture corpus: (source, target, source tree, target tree)."""
    pair_lines = (FIXTURES / "toy_pairs.tsv").read_text(encoding="utf-8").splitlines()
    tree_lines = (FIXTURES / "toy_pairs.tsv.trees").read_text(encoding="utf-8").splitlines()
    out = []
    for pline, tline in zip(pair_lines, tree_lines):
        src, tgt = pline.split("\t")
        src_tree, tgt_tree = (trees.parse_bracketed(s) for s in tline.split("\t"))
        out.append((src, tgt, src_tree, tgt_tree))
    return out


def toy_training_setup(hidden=12, emb=16, merges=400, cap=200, seed=0):
    """BPE, vocab, labels and a fresh model over the fixture corpus."""
    from synpara.model import Model, ModelConfig
    from synpara.textproc import build_vocab, tokenize, train_bpe, vocab_counts_from_corpus
    from synpara.training import CorpusEntry, label_vocabulary

    corpus = load_toy_corpus()
    sentences = [s for s, t, _, _ in corpus] + [t for s, t, _, _ in corpus]
    bpe = train_bpe([tokenize(s) for s in sentences], merges)
    vocab = build_vocab(vocab_counts_from_corpus(bpe, sentences), cap)
    labels = label_vocabulary([tt for _, _, _, tt in corpus] + [st for _, _, st, _ in corpus])
    cfg = ModelConfig(vocab_size=len(vocab), label_vocab=labels, hidden=hidden, emb=emb, max_len=60)
    model = Model.create(cfg, np.random.default_rng(seed))
    entries = [CorpusEntry(s, t, tt) for s, t, _, tt in corpus]
    return model, bpe, vocab, entries, corpus

"""Beam-search decoding with per-hypothesis queue state, fixed-height
generation and multi-height candidate selection.

Hypotheses are immutable; each carries its own decoder state, so two
beams never share a queue cursor.  Final ranking is by length-normalized
log-probability, and a finished hypothesis always outranks live ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import rouge_n
from .model import DecoderState, Model, advance_syntax
from .textproc import (
    EOS,
    BpeModel,
    ExtendedVocab,
    Vocab,
    encode_words,
    extend_for_copy,
    join_subwords,
    tokenize,
)
from .trees import PrunedTree, Tree, height, prune, strip_terminals

_LOG_FLOOR = 1e-300  # probabilities below this never survive a beam anyway


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]  # extended-vocab ids, EOS-terminated when finished
    logp: float
    state: DecoderState
    finished: bool = False

    @property
    def score(self) -> float:
        return self.logp / max(1, len(self.ids))


@dataclass(frozen=True)
class Generation:
    text: str
    height_used: int
    hypothesis: Hypothesis
    candidates: tuple = ()  # (height, text) pairs, only for multi-height mode


def ensure_skeleton(tree: Tree) -> Tree:
    return strip_terminals(tree) if tree.terminals() else tree


def prepare_source(bpe: BpeModel, vocab: Vocab, sentence: str):
    """Tokenize and encode a raw source sentence for decoding."""
    words = tokenize(sentence)
    if not words:
        raise ValueError("empty source sentence")
    src_ids, _, surfaces = encode_words(bpe, vocab, words)
    extension = extend_for_copy(vocab, surfaces)
    ext_ids = [extension.lookup(t) for t in surfaces]
    return src_ids, extension, ext_ids


def ids_to_text(ids, vocab: Vocab, extension: ExtendedVocab) -> str:
    """Map decoded ids to text; extension ids resolve to the copied
    source surface forms."""
    symbols = [extension.token(i) for i in ids if i != EOS]
    return join_subwords(symbols)


def beam_decode(
    model: Model,
    src_ids,
    extension: ExtendedVocab,
    src_ext_ids,
    pruned: PrunedTree,
    beam_width: int = 5,
    max_len: int | None = None,
) -> list[Hypothesis]:
    """Length-capped beam search; returns hypotheses ranked best first."""
    if beam_width < 1:
        raise ValueError("beam width must be >= 1")
    if not src_ids:
        raise ValueError("cannot decode from an empty source")
    max_len = model.config.max_len if max_len is None else min(max_len, model.config.max_len)

    enc = model.encode_source(list(src_ids), extension, list(src_ext_ids))
    _, queue = model.encode_syntax(pruned)
    live = [Hypothesis((), 0.0, model.initial_state(enc))]
    finished: list[Hypothesis] = []

    for _ in range(max_len):
        if not live:
            break
        candidates: list[Hypothesis] = []
        for hyp in live:
            out = model.decode_step(enc, hyp.state, queue)
            logs = np.log(np.maximum(out.dist.data, _LOG_FLOOR))
            p_tr = float(out.p_transition.data)
            k = min(beam_width, logs.size)
            top = np.argsort(-logs, kind="stable")[:k]
            for idx in top:
                idx = int(idx)
                nxt = DecoderState(
                    s=out.next_s,
                    cursor=hyp.state.cursor,
                    prev_id=idx,
                    exhausted=hyp.state.exhausted,
                )
                nxt = advance_syntax(nxt, p_tr, len(queue))
                candidates.append(
                    Hypothesis(hyp.ids + (idx,), hyp.logp + float(logs[idx]), nxt, idx == EOS)
                )
        candidates.sort(key=lambda h: -h.logp)
        top_k = candidates[:beam_width]
        live = [h for h in top_k if not h.finished]
        finished.extend(h for h in top_k if h.finished)
        if len(finished) >= beam_width:
            break

    pool = finished if finished else live
    return sorted(pool, key=lambda h: -h.score)


def generate_f(
    model: Model,
    bpe: BpeModel,
    vocab: Vocab,
    source: str,
    exemplar_tree: Tree,
    h: int | None = None,
    beam_width: int = 5,
) -> Generation:
    """Decode with the exemplar skeleton pruned at height ``h`` (full
    height when omitted)."""
    skeleton = ensure_skeleton(exemplar_tree)
    h_max = height(skeleton)
    used = h_max if h is None else h
    if used < 1:
        raise ValueError("height must be >= 1")
    used = min(used, h_max)
    pruned = prune(skeleton, used)
    src_ids, extension, ext_ids = prepare_source(bpe, vocab, source)
    best = beam_decode(model, src_ids, extension, ext_ids, pruned, beam_width)[0]
    return Generation(ids_to_text(best.ids, vocab, extension), used, best)


def generate_r(
    model: Model,
    bpe: BpeModel,
    vocab: Vocab,
    source: str,
    exemplar_tree: Tree,
    beam_width: int = 5,
) -> Generation:
    """Generate at the five heights below the exemplar's full height and
    return the candidate with the highest ROUGE-1 against the source;
    ties go to the smallest height."""
    skeleton = ensure_skeleton(exemplar_tree)
    h_max = height(skeleton)
    heights = []
    for h in range(h_max, h_max - 5, -1):
        if h >= 1 and h not in heights:
            heights.append(h)
    generations = {h: generate_f(model, bpe, vocab, source, skeleton, h, beam_width) for h in heights}
    src_tokens = tokenize(source)
    best_h = None
    best_score = -1.0
    for h in sorted(heights):  # ascending: later candidates must win strictly
        score = rouge_n(tokenize(generations[h].text), src_tokens, 1)
        if score > best_score:
            best_score = score
            best_h = h
    chosen = generations[best_h]
    candidates = tuple((h, generations[h].text) for h in heights)
    return Generation(chosen.text, best_h, chosen.hypothesis, candidates)

"""Joint token/transition loss, teacher forcing, per-epoch height
resampling, Adam optimization and checkpointing.

Per step the loss is -(1/T) * sum_t [log P(z*_t) + a_t*log(p_t) +
(1-a_t)*log(1-p_t)]: token negative log-likelihood over the extended
vocabulary plus binary cross-entropy of the transition probability
against the signalling bit.  The queue always advances by the gold bits
during training; the teacher-forcing ratio applies to token inputs only.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DataError, NumericError
from .model import DecoderState, Model
from .textproc import EOS, BpeModel, ExtendedVocab, Vocab, encode_words, extend_for_copy, tokenize
from .trees import PrunedTree, SignallingVector, Tree, height, leaf_spans, prune, strip_terminals

PROB_FLOOR = 1e-12
MIN_SAMPLED_HEIGHT = 3


class SkipExample(DataError):
    """Example cannot be turned into a training instance; carries the reason."""


@dataclass
class TrainConfig:
    lr: float = 7e-5
    tf_ratio: float = 0.9
    max_len: int = 60
    batch: int = 32
    epochs: int = 10
    seed: int = 0
    hidden: int = 128
    emb: int = 300
    vocab_cap: int = 24000
    merges: int = 10000
    val_frac: float = 0.1
    beam: int = 5

    def __post_init__(self):
        if not 0.0 <= self.tf_ratio <= 1.0:
            raise ValueError("tf_ratio must lie in [0, 1]")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.val_frac < 1.0:
            raise ValueError("val_frac must lie in [0, 1)")


@dataclass(frozen=True)
class CorpusEntry:
    """One raw (source, target) pair with the target's full parse."""

    source: str
    target: str
    target_tree: Tree


@dataclass(frozen=True)
class AlignedExample:
    src_ids: tuple[int, ...]
    src_surfaces: tuple[str, ...]
    src_ext_ids: tuple[int, ...]
    extension: ExtendedVocab
    tgt_input_ids: tuple[int, ...]  # base-vocab ids fed back under teacher forcing
    tgt_ext_ids: tuple[int, ...]    # extended-vocab ids scored by the NLL
    bits: tuple[int, ...]           # per-token transition bits, EOS bit is 0
    spans: SignallingVector
    pruned: PrunedTree
    height_used: int
    target_words: tuple[str, ...]


def sample_height(tree_height: int, rng) -> int:
    """Uniform from {3..height}; trees shorter than 3 stay unpruned."""
    if tree_height < MIN_SAMPLED_HEIGHT:
        return tree_height
    return int(rng.integers(MIN_SAMPLED_HEIGHT, tree_height + 1))


def label_vocabulary(full_trees) -> tuple[str, ...]:
    """Sorted structural node labels of the given parses, with the
    unknown-tag sentinel in slot 0."""
    from .model import UNK_TAG

    labels: set[str] = set()

    def collect(node: Tree) -> None:
        labels.add(node.label)
        for c in node.children:
            if c.token is None:
                collect(c)

    for t in full_trees:
        collect(t)
    labels.discard(UNK_TAG)
    return (UNK_TAG,) + tuple(sorted(labels))


def make_training_example(
    pair: tuple[str, str],
    bpe: BpeModel,
    vocab: Vocab,
    target_tree: Tree,
    h: int,
    max_len: int = 60,
) -> AlignedExample:
    """Build one training instance at pruning height ``h``.

    The paraphrase acts as its own exemplar: the exemplar tree is the
    target's skeleton pruned at ``h`` and the signalling bits come from
    the word spans at that height, each word's bit carried by its first
    subword.  Raises :class:`SkipExample` when the target words do not
    align with the tree terminals or a side exceeds ``max_len`` subwords.
    """
    source, target = pair
    src_words = tokenize(source)
    if not src_words:
        raise SkipExample("empty source after tokenization")
    tgt_words = tokenize(target)
    terminals = target_tree.terminals()
    if tgt_words != terminals:
        raise SkipExample(
            f"tree/token misalignment: words {tgt_words!r} vs terminals {terminals!r}"
        )

    src_ids, _, src_surfaces = encode_words(bpe, vocab, src_words)
    if len(src_ids) > max_len:
        raise SkipExample(f"source length {len(src_ids)} exceeds {max_len}")
    extension = extend_for_copy(vocab, src_surfaces)
    src_ext_ids = tuple(extension.lookup(t) for t in src_surfaces)

    sv = leaf_spans(target_tree, h)
    skeleton = strip_terminals(target_tree)
    pruned = prune(skeleton, h)

    tgt_input: list[int] = []
    tgt_ext: list[int] = []
    bits: list[int] = []
    for word, word_bit in zip(tgt_words, sv.bits):
        ids, _, surfaces = encode_words(bpe, vocab, [word])
        for j, (base_id, surf) in enumerate(zip(ids, surfaces)):
            tgt_input.append(base_id)
            tgt_ext.append(extension.lookup(surf))
            bits.append(word_bit if j == 0 else 0)
    tgt_input.append(EOS)
    tgt_ext.append(EOS)
    bits.append(0)
    if len(tgt_ext) > max_len:
        raise SkipExample(f"target length {len(tgt_ext)} exceeds {max_len}")

    return AlignedExample(
        src_ids=tuple(src_ids),
        src_surfaces=tuple(src_surfaces),
        src_ext_ids=src_ext_ids,
        extension=extension,
        tgt_input_ids=tuple(tgt_input),
        tgt_ext_ids=tuple(tgt_ext),
        bits=tuple(bits),
        spans=sv,
        pruned=pruned,
        height_used=h,
        target_words=tuple(tgt_words),
    )


@dataclass
class ExampleStats:
    token_probs: list[float] = field(default_factory=list)
    transition_probs: list[float] = field(default_factory=list)
    pops: int = 0


def example_loss(model: Model, ex: AlignedExample, rng, tf_ratio: float):
    """Teacher-forced forward pass; returns (scalar loss tensor, stats).

    The queue cursor follows the gold bits exactly; token inputs use the
    gold previous token with probability ``tf_ratio``, otherwise the
    model's argmax from the previous step.
    """
    enc = model.encode_source(list(ex.src_ids), ex.extension, list(ex.src_ext_ids))
    _, queue = model.encode_syntax(ex.pruned)
    state = model.initial_state(enc)
    stats = ExampleStats()
    terms: list[ad.Tensor] = []
    cursor = 0
    prev_ext_id = state.prev_id
    s = state.s
    T = len(ex.tgt_ext_ids)
    for t in range(T):
        if ex.bits[t]:
            cursor += 1
            stats.pops += 1
        step_state = DecoderState(s=s, cursor=cursor, prev_id=prev_ext_id)
        out = model.decode_step(enc, step_state, queue)

        target = ex.tgt_ext_ids[t]
        p_tok = ad.clip(ad.pick(out.dist, target), PROB_FLOOR, 1.0 - PROB_FLOOR)
        p_tr = ad.clip(out.p_transition, PROB_FLOOR, 1.0 - PROB_FLOOR)
        gate_term = ad.log(p_tr) if ex.bits[t] else ad.log(ad.add(1.0, ad.mul(p_tr, -1.0)))
        terms.append(ad.add(ad.log(p_tok), gate_term))
        stats.token_probs.append(float(p_tok.data))
        stats.transition_probs.append(float(out.p_transition.data))

        if t + 1 < T:
            if tf_ratio >= 1.0 or float(rng.random()) < tf_ratio:
                prev_ext_id = target
            else:
                prev_ext_id = int(np.argmax(out.dist.data))
            s = out.next_s
    total = ad.vsum(ad.stack(terms))
    loss = ad.mul(total, -1.0 / T)
    if not np.isfinite(loss.data):
        raise NumericError("non-finite training loss")
    return loss, stats


def batch_loss(model: Model, batch, rng, tf_ratio: float):
    """Mean of per-example losses; also returns aggregate diagnostics."""
    if not batch:
        raise ValueError("batch must be non-empty")
    losses = []
    token_nll = 0.0
    gate_bce = 0.0
    for ex in batch:
        loss, stats = example_loss(model, ex, rng, tf_ratio)
        losses.append(loss)
        T = len(ex.tgt_ext_ids)
        token_nll += -sum(np.log(np.clip(stats.token_probs, PROB_FLOOR, None))) / T
        gate_bce += -sum(
            np.log(np.clip(p if b else 1.0 - p, PROB_FLOOR, None))
            for b, p in zip(ex.bits, stats.transition_probs)
        ) / T
    mean_loss = ad.mean(ad.stack(losses))
    return mean_loss, token_nll / len(batch), gate_bce / len(batch)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """Standard bias-corrected Adam update, in place; missing grads are 0."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def validation_loss(model: Model, entries, bpe, vocab, config: TrainConfig, rng) -> float:
    """Gate teacher-forced, full token teacher forcing, fixed heights."""
    if not entries:
        return float("nan")
    total = 0.0
    for entry in entries:
        h = sample_height(height(strip_terminals(entry.target_tree)), rng)
        ex = make_training_example(
            (entry.source, entry.target), bpe, vocab, entry.target_tree, h, config.max_len
        )
        loss, _ = example_loss(model, ex, rng, tf_ratio=1.0)
        total += float(loss.data)
    return total / len(entries)


def train(
    model: Model,
    entries: list[CorpusEntry],
    bpe: BpeModel,
    vocab: Vocab,
    config: TrainConfig,
    rng,
    out_dir=None,
    log=None,
    max_steps: int | None = None,
    stop_loss: float | None = None,
):
    """Optimize the model; returns the per-step history.

    Every epoch resamples each example's pruning height uniformly from
    {3..its tree height} and reshuffles the batches.  When ``out_dir`` is
    given, writes ``loss_log.tsv`` plus ``last.ckpt`` every epoch and
    ``best.ckpt`` whenever the validation loss improves (training loss
    when the validation split is empty).
    """
    if not entries:
        raise DataError("training corpus is empty")
    order = rng.permutation(len(entries)).tolist()
    n_val = int(round(len(entries) * config.val_frac))
    val_entries = [entries[i] for i in order[:n_val]]
    train_entries = [entries[i] for i in order[n_val:]]
    if not train_entries:
        raise DataError("validation split consumed every example")

    adam = AdamState()
    history = []
    best_val = float("inf")
    step = 0
    skip_logged: set[int] = set()
    log_lines: list[str] = []
    stop = False

    for epoch in range(config.epochs):
        idx = rng.permutation(len(train_entries)).tolist()
        batches = [idx[i : i + config.batch] for i in range(0, len(idx), config.batch)]
        for batch_idx in batches:
            batch = []
            for i in batch_idx:
                entry = train_entries[i]
                h = sample_height(height(strip_terminals(entry.target_tree)), rng)
                try:
                    batch.append(
                        make_training_example(
                            (entry.source, entry.target),
                            bpe,
                            vocab,
                            entry.target_tree,
                            h,
                            config.max_len,
                        )
                    )
                except SkipExample as exc:
                    if i not in skip_logged:
                        skip_logged.add(i)
                        if log:
                            log(f"skipping example {i}: {exc}")
            if not batch:
                continue
            ad.zero_grads(model.params)
            loss, token_nll, gate_bce = batch_loss(model, batch, rng, config.tf_ratio)
            ad.backward(loss)
            adam_step(model.params, adam, config.lr)
            step += 1
            record = {
                "step": step,
                "epoch": epoch,
                "loss": float(loss.data),
                "token_nll": token_nll,
                "gate_bce": gate_bce,
            }
            history.append(record)
            log_lines.append(
                f"{step}\t{record['loss']:.10g}\t{token_nll:.10g}\t{gate_bce:.10g}"
            )
            if max_steps is not None and step >= max_steps:
                stop = True
                break
            if stop_loss is not None and record["loss"] < stop_loss:
                stop = True
                break

        val = validation_loss(model, val_entries, bpe, vocab, config, rng)
        score = val if val_entries else (history[-1]["loss"] if history else float("inf"))
        if out_dir is not None:
            model.save(os.path.join(out_dir, "last.ckpt"))
            if score < best_val:
                model.save(os.path.join(out_dir, "best.ckpt"))
        if score < best_val:
            best_val = score
        if log:
            log(f"epoch {epoch}: val_loss={val:.6g} best={best_val:.6g}")
        if stop:
            break

    if out_dir is not None:
        # one line per optimizer step: step, loss, token_nll, gate_bce
        with open(os.path.join(out_dir, "loss_log.tsv"), "w", encoding="utf-8") as fh:
            for line in log_lines:
                fh.write(line + "\n")
    return history

"""Exemplar-guided paraphrase network.

A bidirectional multi-layer GRU encodes the source sentence; a top-down
recursive encoder turns the pruned exemplar skeleton into one hidden
vector per node, with the leaf vectors queued left to right.  Each
decoder step attends over the source states, mixes a vocabulary softmax
with a copy distribution (pointer-generator) and emits a transition
probability that decides whether the next step consumes the next queue
leaf.

All decoding state lives in immutable :class:`DecoderState` values, so
hypotheses never share syntactic state and parameters can be shared by
concurrent decoders.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .checkpoint import load_arrays, save_arrays
from .errors import DataError
from .textproc import SOS, UNK, ExtendedVocab
from .trees import PrunedTree, Tree

UNK_TAG = "<unk-tag>"

ENCODER_LAYERS = 3

# decode-step feature order, fixed and recorded in every checkpoint manifest
FEATURE_ORDER = "context;syntax;state;prev_embedding"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    label_vocab: tuple[str, ...]
    hidden: int = 128
    emb: int = 300
    max_len: int = 60

    def __post_init__(self):
        if UNK_TAG not in self.label_vocab:
            raise ValueError(f"label vocabulary must contain {UNK_TAG!r}")


@dataclass(frozen=True)
class DecoderState:
    """Recurrent state plus the decoder's position in the leaf queue.

    ``cursor`` is 1-based and always points at the queue element currently
    providing the syntactic signal; ``prev_id`` is the previously emitted
    token in extended-vocabulary space.
    """

    s: ad.Tensor
    cursor: int
    prev_id: int
    exhausted: bool = False


@dataclass(frozen=True)
class EncodedSource:
    """Per-example encoder bundle reused across decode steps."""

    states: ad.Tensor        # (T, 2*hidden)
    att_proj: ad.Tensor      # (T, hidden); W_h applied once
    init_state: ad.Tensor    # (hidden,)
    ext_ids: np.ndarray      # source positions in extended-vocab space
    extension: ExtendedVocab


@dataclass(frozen=True)
class StepResult:
    dist: ad.Tensor          # (extended vocab size,)
    p_gen: ad.Tensor         # ()
    alpha: ad.Tensor         # (T,)
    p_transition: ad.Tensor  # ()
    next_s: ad.Tensor        # (hidden,)


def _glorot(rng, shape):
    scale = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-scale, scale, size=shape)


def _gru_param_names(prefix):
    return [f"{prefix}_{n}" for n in ("Wr", "Ur", "br", "Wz", "Uz", "bz", "Wn", "Un", "bn")]


def _init_gru(params, rng, prefix, in_dim, hidden):
    for gate in ("r", "z", "n"):
        params[f"{prefix}_W{gate}"] = ad.tensor(_glorot(rng, (hidden, in_dim)))
        params[f"{prefix}_U{gate}"] = ad.tensor(_glorot(rng, (hidden, hidden)))
        params[f"{prefix}_b{gate}"] = ad.zeros(hidden)


def _gru_step(params, prefix, x, h):
    def gate(name, activation):
        pre = ad.add(
            ad.add(ad.matmul(params[f"{prefix}_W{name}"], x), ad.matmul(params[f"{prefix}_U{name}"], h)),
            params[f"{prefix}_b{name}"],
        )
        return activation(pre)

    r = gate("r", ad.sigmoid)
    z = gate("z", ad.sigmoid)
    n = ad.tanh(
        ad.add(
            ad.add(ad.matmul(params[f"{prefix}_Wn"], x), ad.mul(r, ad.matmul(params[f"{prefix}_Un"], h))),
            params[f"{prefix}_bn"],
        )
    )
    one_minus_z = ad.add(1.0, ad.mul(z, -1.0))
    return ad.add(ad.mul(one_minus_z, n), ad.mul(z, h))


class Model:
    """Parameter container plus the forward operations of the network."""

    def __init__(self, config: ModelConfig, params: dict[str, ad.Tensor]):
        self.config = config
        self.params = params
        self._label_ids = {lab: i for i, lab in enumerate(config.label_vocab)}

    # --- construction / persistence ------------------------------------

    @classmethod
    def create(cls, config: ModelConfig, rng) -> "Model":
        h, e = config.hidden, config.emb
        p: dict[str, ad.Tensor] = {}
        p["tok_emb"] = ad.tensor(rng.normal(0.0, 0.1, size=(config.vocab_size, e)))
        p["label_emb"] = ad.tensor(rng.normal(0.0, 0.1, size=(len(config.label_vocab), e)))
        for layer in range(ENCODER_LAYERS):
            in_dim = e if layer == 0 else 2 * h
            for direction in ("f", "b"):
                _init_gru(p, rng, f"enc{layer}{direction}", in_dim, h)
        p["syn_W_pa"] = ad.tensor(_glorot(rng, (h, h)))
        p["syn_W_v"] = ad.tensor(_glorot(rng, (h, e)))
        p["syn_b"] = ad.zeros(h)
        p["syn_root"] = ad.tensor(rng.normal(0.0, 0.1, size=h))
        p["att_W_h"] = ad.tensor(_glorot(rng, (h, 2 * h)))
        p["att_W_s"] = ad.tensor(_glorot(rng, (h, h)))
        p["att_b"] = ad.zeros(h)
        p["att_v"] = ad.tensor(rng.normal(0.0, 0.1, size=h))
        feat = 2 * h + h + h + e
        p["gate_w"] = ad.tensor(rng.normal(0.0, 0.05, size=feat))
        p["gate_b"] = ad.zeros(())
        p["out_W"] = ad.tensor(_glorot(rng, (config.vocab_size, feat)))
        p["out_b"] = ad.zeros(config.vocab_size)
        p["copy_w_c"] = ad.tensor(rng.normal(0.0, 0.05, size=2 * h))
        p["copy_w_s"] = ad.tensor(rng.normal(0.0, 0.05, size=h))
        p["copy_w_x"] = ad.tensor(rng.normal(0.0, 0.05, size=e))
        p["copy_b"] = ad.zeros(())
        _init_gru(p, rng, "dec", 2 * h + h + e, h)
        p["init_W"] = ad.tensor(_glorot(rng, (h, 2 * h)))
        p["init_b"] = ad.zeros(h)
        return cls(config, p)

    def save(self, path) -> None:
        manifest = {
            "hidden": self.config.hidden,
            "emb": self.config.emb,
            "vocab_size": self.config.vocab_size,
            "label_vocab": list(self.config.label_vocab),
            "max_len": self.config.max_len,
            "encoder_layers": ENCODER_LAYERS,
            "decoder_features": FEATURE_ORDER,
        }
        save_arrays(path, {k: v.data for k, v in self.params.items()}, manifest)

    @classmethod
    def load(cls, path) -> "Model":
        arrays, manifest = load_arrays(path)
        try:
            config = ModelConfig(
                vocab_size=manifest["vocab_size"],
                label_vocab=tuple(manifest["label_vocab"]),
                hidden=manifest["hidden"],
                emb=manifest["emb"],
                max_len=manifest["max_len"],
            )
        except KeyError as exc:
            raise DataError(f"{path}: checkpoint manifest missing {exc}") from exc
        return cls(config, {k: ad.tensor(v) for k, v in arrays.items()})

    # --- semantic encoder -------------------------------------------------

    def encode_semantic(self, src_ids) -> tuple[ad.Tensor, ad.Tensor]:
        """Run the bidirectional stacked GRU over source token ids.

        Returns the (T, 2*hidden) state matrix of the top layer and the
        decoder's initial recurrent state.
        """
        if len(src_ids) == 0:
            raise ValueError("cannot encode an empty source")
        if len(src_ids) > self.config.max_len:
            raise ValueError(f"source length {len(src_ids)} exceeds max {self.config.max_len}")
        p = self.params
        h = self.config.hidden
        inputs = [ad.embedding_row(p["tok_emb"], i) for i in src_ids]
        fwd_states: list[ad.Tensor] = []
        bwd_states: list[ad.Tensor] = []
        for layer in range(ENCODER_LAYERS):
            fwd_states, bwd_states = [], []
            state = ad.zeros(h)
            for x in inputs:
                state = _gru_step(p, f"enc{layer}f", x, state)
                fwd_states.append(state)
            state = ad.zeros(h)
            for x in reversed(inputs):
                state = _gru_step(p, f"enc{layer}b", x, state)
                bwd_states.append(state)
            bwd_states.reverse()
            inputs = [ad.concat([f, b]) for f, b in zip(fwd_states, bwd_states)]
        states = ad.stack(inputs)
        summary = ad.concat([fwd_states[-1], bwd_states[0]])
        init = ad.tanh(ad.add(ad.matmul(p["init_W"], summary), p["init_b"]))
        return states, init

    def encode_source(self, src_ids, extension: ExtendedVocab, src_ext_ids) -> EncodedSource:
        states, init = self.encode_semantic(src_ids)
        att_proj = ad.matmul(states, ad.transpose(self.params["att_W_h"]))
        return EncodedSource(
            states=states,
            att_proj=att_proj,
            init_state=init,
            ext_ids=np.asarray(src_ext_ids, dtype=np.intp),
            extension=extension,
        )

    # --- syntactic encoder ------------------------------------------------

    def label_id(self, label: str) -> int:
        return self._label_ids.get(label, self._label_ids[UNK_TAG])

    def encode_syntax(self, pruned: PrunedTree) -> tuple[dict[int, ad.Tensor], list[ad.Tensor]]:
        """Top-down node representations for a pruned skeleton.

        Every node's vector is GeLU(W_pa * parent + W_v * label_emb + b);
        the root uses a learned parent state.  Returns all node vectors
        keyed by ``id(node)`` plus the left-to-right queue of leaf vectors.
        """
        p = self.params
        reprs: dict[int, ad.Tensor] = {}
        queue: list[ad.Tensor] = []

        def visit(node: Tree, parent_vec: ad.Tensor) -> None:
            lab = ad.embedding_row(p["label_emb"], self.label_id(node.label))
            vec = ad.gelu(
                ad.add(ad.add(ad.matmul(p["syn_W_pa"], parent_vec), ad.matmul(p["syn_W_v"], lab)), p["syn_b"])
            )
            reprs[id(node)] = vec
            if not node.children:
                queue.append(vec)
            for child in node.children:
                visit(child, vec)

        visit(pruned.skeleton, p["syn_root"])
        return reprs, queue

    # --- decoder ------------------------------------------------------------

    def attend(self, enc: EncodedSource, s_t: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        """Attention distribution over source states and its context vector."""
        p = self.params
        scores = ad.matmul(
            ad.tanh(ad.add(ad.add(enc.att_proj, ad.matmul(p["att_W_s"], s_t)), p["att_b"])),
            p["att_v"],
        )
        alpha = ad.softmax(scores)
        context = ad.matmul(alpha, enc.states)
        return alpha, context

    def gate(self, context, h_syntax, s_t, prev_emb) -> ad.Tensor:
        """Transition probability in (0, 1): pop the queue when >= 0.5."""
        p = self.params
        feats = ad.concat([context, h_syntax, s_t, prev_emb])
        return ad.sigmoid(ad.add(ad.matmul(p["gate_w"], feats), p["gate_b"]))

    def prev_embedding(self, prev_id: int) -> ad.Tensor:
        base_id = prev_id if prev_id < self.config.vocab_size else UNK
        return ad.embedding_row(self.params["tok_emb"], base_id)

    def decode_step(self, enc: EncodedSource, state: DecoderState, queue: list[ad.Tensor]) -> StepResult:
        """One decoder step: extended-vocabulary distribution, generation
        probability, attention, transition probability and next GRU state."""
        p = self.params
        s_t = state.s
        h_syntax = queue[state.cursor - 1]
        prev_emb = self.prev_embedding(state.prev_id)
        alpha, context = self.attend(enc, s_t)
        p_transition = self.gate(context, h_syntax, s_t, prev_emb)
        feats = ad.concat([context, h_syntax, s_t, prev_emb])
        vocab_dist = ad.softmax(ad.add(ad.matmul(p["out_W"], feats), p["out_b"]))
        p_gen = ad.sigmoid(
            ad.add(
                ad.add(
                    ad.add(ad.matmul(p["copy_w_c"], context), ad.matmul(p["copy_w_s"], s_t)),
                    ad.matmul(p["copy_w_x"], prev_emb),
                ),
                p["copy_b"],
            )
        )
        ext_size = enc.extension.size
        n_extra = ext_size - self.config.vocab_size
        padded = ad.concat([vocab_dist, ad.zeros(n_extra)]) if n_extra else vocab_dist
        one_minus = ad.add(1.0, ad.mul(p_gen, -1.0))
        copy_dist = ad.scatter_add(ad.mul(alpha, one_minus), enc.ext_ids, ext_size)
        dist = ad.add(ad.mul(padded, p_gen), copy_dist)
        next_s = _gru_step(p, "dec", ad.concat([context, h_syntax, prev_emb]), s_t)
        return StepResult(dist, p_gen, alpha, p_transition, next_s)

    def initial_state(self, enc: EncodedSource) -> DecoderState:
        return DecoderState(s=enc.init_state, cursor=1, prev_id=SOS)


def advance_syntax(state: DecoderState, p_transition: float, queue_len: int) -> DecoderState:
    """Move the cursor to the next queue element when the transition
    probability crosses 0.5; at the final element the cursor clamps and the
    state is flagged exhausted."""
    if not 1 <= state.cursor <= queue_len:
        raise ValueError(f"cursor {state.cursor} outside queue of length {queue_len}")
    if p_transition < 0.5:
        return state
    if state.cursor < queue_len:
        return replace(state, cursor=state.cursor + 1)
    return replace(state, exhausted=True)

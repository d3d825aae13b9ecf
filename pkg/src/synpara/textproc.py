"""Word tokenization, byte-pair subword segmentation and vocabularies.

The tokenizer lowercases, splits punctuation into standalone tokens and
then splits on whitespace, matching the treebank-style surface of the
corpora ("ca n't", "?" as its own token).  BPE training is the classic
greedy merge procedure; ties between equally frequent symbol pairs break
lexicographically so training is deterministic.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

WORD_END = "</w>"

PAD, UNK, SOS, EOS = 0, 1, 2, 3
PAD_TOKEN, UNK_TOKEN, SOS_TOKEN, EOS_TOKEN = "<pad>", "<unk>", "<sos>", "<eos>"
RESERVED = (PAD_TOKEN, UNK_TOKEN, SOS_TOKEN, EOS_TOKEN)

_PUNCT_RE = re.compile(r"([.,!?;:\"()\[\]])")


def tokenize(text: str) -> list[str]:
    """Lowercase, give punctuation marks their own token, split on space."""
    return _PUNCT_RE.sub(r" \1 ", text.lower()).split()


def _word_symbols(word: str) -> list[str]:
    """Initial symbol sequence: characters, word-end mark fused on the last."""
    return list(word[:-1]) + [word[-1] + WORD_END]


def detokenize(tokens) -> str:
    return " ".join(tokens)


@dataclass
class BpeModel:
    """Ordered merge rules over a character alphabet with a word-end mark."""

    merges: list[tuple[str, str]]
    alphabet: set[str] = field(default_factory=set)

    def __post_init__(self):
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._cache: dict[str, tuple[str, ...]] = {}

    def segment(self, word: str) -> tuple[str, ...]:
        """Split one word into subword symbols by applying merges greedily
        in training order (lowest-rank applicable pair first)."""
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = _word_symbols(word)
        ranks = self._ranks
        while len(symbols) > 1:
            best_rank = None
            best_idx = -1
            for i in range(len(symbols) - 1):
                r = ranks.get((symbols[i], symbols[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank = r
                    best_idx = i
            if best_rank is None:
                break
            merged = symbols[best_idx] + symbols[best_idx + 1]
            pair = (symbols[best_idx], symbols[best_idx + 1])
            out = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and (symbols[i], symbols[i + 1]) == pair:
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            symbols = out
        result = tuple(symbols)
        self._cache[word] = result
        return result

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for a, b in self.merges:
                fh.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        merges = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split(" ")
                if len(parts) != 2:
                    raise DataError(f"{path}: bad merge rule at line {lineno}")
                merges.append((parts[0], parts[1]))
        alphabet = set()
        for a, b in merges:
            alphabet.update(a)
            alphabet.update(b)
        return cls(merges, alphabet)


def train_bpe(corpus, num_merges: int) -> BpeModel:
    """Learn ``num_merges`` merge rules from an iterable of token lists."""
    word_counts: Counter[str] = Counter()
    for tokens in corpus:
        word_counts.update(tokens)
    if not word_counts:
        raise DataError("cannot train BPE on an empty corpus")
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")

    alphabet = {ch for word in word_counts for ch in word}
    alphabet.add(WORD_END)
    pieces = {w: tuple(_word_symbols(w)) for w in word_counts}
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pair_counts: Counter[tuple[str, str]] = Counter()
        for word, syms in pieces.items():
            count = word_counts[word]
            for i in range(len(syms) - 1):
                pair_counts[(syms[i], syms[i + 1])] += count
        if not pair_counts:
            break
        top = max(pair_counts.values())
        best = min(p for p, c in pair_counts.items() if c == top)
        merges.append(best)
        merged = best[0] + best[1]
        new_pieces = {}
        for word, syms in pieces.items():
            out = []
            i = 0
            while i < len(syms):
                if i < len(syms) - 1 and (syms[i], syms[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            new_pieces[word] = tuple(out)
        pieces = new_pieces
    return BpeModel(merges, alphabet)


@dataclass
class Vocab:
    """Dense token-to-id map with fixed PAD/UNK/SOS/EOS ids."""

    itos: list[str]
    max_size: int

    def __post_init__(self):
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self.itos):
            raise DataError(f"vocab id {idx} out of range (size {len(self.itos)})")
        return self.itos[idx]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.itos:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            itos = [line.rstrip("\n") for line in fh]
        while itos and itos[-1] == "":
            itos.pop()
        if tuple(itos[: len(RESERVED)]) != RESERVED:
            raise DataError(f"{path}: reserved tokens missing or reordered")
        return cls(itos, max_size=len(itos))


def build_vocab(counts: Counter, max_size: int) -> Vocab:
    """Most frequent tokens first (count desc, then lexicographic)."""
    if max_size < len(RESERVED):
        raise ValueError(f"max_size must be at least {len(RESERVED)}")
    itos = list(RESERVED)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    for tok, _ in ordered:
        if len(itos) >= max_size:
            break
        if tok not in RESERVED:
            itos.append(tok)
    return Vocab(itos, max_size)


def vocab_counts_from_corpus(bpe: BpeModel, sentences) -> Counter:
    counts: Counter[str] = Counter()
    for sentence in sentences:
        for word in tokenize(sentence):
            counts.update(bpe.segment(word))
    return counts


def encode(bpe: BpeModel, vocab: Vocab, sentence: str) -> list[int]:
    """Tokenize, BPE-segment and map to vocabulary ids (UNK for unknown)."""
    ids = []
    for word in tokenize(sentence):
        ids.extend(vocab.lookup(s) for s in bpe.segment(word))
    return ids


def encode_words(bpe: BpeModel, vocab: Vocab, words) -> tuple[list[int], list[int], list[str]]:
    """Encode pre-tokenized words; also report which subword starts a word.

    Returns (ids, word_start flags, subword surfaces).
    """
    ids: list[int] = []
    starts: list[int] = []
    surfaces: list[str] = []
    for word in words:
        for j, sym in enumerate(bpe.segment(word)):
            ids.append(vocab.lookup(sym))
            starts.append(1 if j == 0 else 0)
            surfaces.append(sym)
    return ids, starts, surfaces


def decode(bpe: BpeModel, vocab: Vocab, ids) -> str:
    """Map ids back to text; UNK renders as the literal '<unk>'."""
    return join_subwords(vocab.token(i) for i in ids)


def join_subwords(symbols) -> str:
    text = "".join(symbols)
    return text.replace(WORD_END, " ").strip()


@dataclass
class ExtendedVocab:
    """Base vocabulary plus this example's out-of-vocabulary source tokens.

    Extension entries get the ids ``len(base) .. len(base)+k-1`` in first
    occurrence order, never colliding with base ids.
    """

    base: Vocab
    extension: list[str]

    def __post_init__(self):
        self._ext_ids = {tok: len(self.base) + i for i, tok in enumerate(self.extension)}

    @property
    def size(self) -> int:
        return len(self.base) + len(self.extension)

    def lookup(self, token: str) -> int:
        base_id = self.base.lookup(token)
        if base_id != UNK:
            return base_id
        return self._ext_ids.get(token, UNK)

    def token(self, idx: int) -> str:
        if idx < len(self.base):
            return self.base.token(idx)
        if idx < self.size:
            return self.extension[idx - len(self.base)]
        raise DataError(f"extended vocab id {idx} out of range (size {self.size})")


def extend_for_copy(vocab: Vocab, source_tokens) -> ExtendedVocab:
    """Extension holding the source tokens absent from the base vocabulary,
    deduplicated, in first-occurrence order."""
    extension: list[str] = []
    seen = set()
    for tok in source_tokens:
        if vocab.lookup(tok) == UNK and tok != UNK_TOKEN and tok not in seen:
            seen.add(tok)
            extension.append(tok)
    return ExtendedVocab(vocab, extension)

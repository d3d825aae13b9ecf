"""Alignment metrics (BLEU, ROUGE-1/2/L), syntactic-transfer metrics
(TED-E against the exemplar, TED-R against the reference), return-input
baselines, a paired permutation test and the evaluation report.

All text metrics operate on lowercased word sequences from
:func:`synpara.textproc.tokenize`.  Per-example metrics are pure
functions, so scoring parallelizes trivially; aggregation is a plain
mean (BLEU defaults to corpus-level counts instead, switchable).
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .trees import Tree, strip_terminals, ted

METRIC_NAMES = ("BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "TED-R", "TED-E")

BLEU_SMOOTH_EPS = 0.1


@dataclass(frozen=True)
class EvalTriple:
    """Source/exemplar/reference surfaces with their full parses."""

    source: str
    exemplar: str
    reference: str
    source_tree: Tree
    exemplar_tree: Tree
    reference_tree: Tree

    def __post_init__(self):
        if not (self.source and self.exemplar and self.reference):
            raise DataError("evaluation triple with an empty sentence")


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu_order_stats(candidate, reference, max_n=4):
    """Per-order (clipped matches, candidate n-gram total)."""
    stats = []
    for n in range(1, max_n + 1):
        cand = ngram_counts(candidate, n)
        ref = ngram_counts(reference, n)
        matches = sum(min(c, ref[g]) for g, c in cand.items())
        stats.append((matches, max(len(candidate) - n + 1, 0)))
    return stats


def _combine_bleu(stats, cand_len, ref_len, max_n=4):
    log_sum = 0.0
    orders = 0
    for matches, total in stats:
        if total == 0:
            continue  # candidate too short for this order
        orders += 1
        p = matches / total if matches > 0 else BLEU_SMOOTH_EPS / total
        log_sum += math.log(p)
    if orders == 0 or cand_len == 0:
        return 0.0
    precision = math.exp(log_sum / orders)
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * precision


def bleu(candidate, reference, max_n: int = 4) -> float:
    """Sentence BLEU with clipped precisions, brevity penalty and
    epsilon smoothing of zero-match orders."""
    candidate, reference = list(candidate), list(reference)
    if not candidate:
        return 0.0
    stats = _bleu_order_stats(candidate, reference, max_n)
    return _combine_bleu(stats, len(candidate), len(reference), max_n)


def corpus_bleu(pairs, max_n: int = 4) -> float:
    """BLEU over pooled n-gram counts of (candidate, reference) pairs."""
    totals = [(0, 0)] * max_n
    cand_len = ref_len = 0
    for candidate, reference in pairs:
        candidate, reference = list(candidate), list(reference)
        cand_len += len(candidate)
        ref_len += len(reference)
        for i, (m, t) in enumerate(_bleu_order_stats(candidate, reference, max_n)):
            totals[i] = (totals[i][0] + m, totals[i][1] + t)
    return _combine_bleu(totals, cand_len, ref_len, max_n)


def _f1(matches: float, cand_total: int, ref_total: int) -> float:
    if cand_total == 0 or ref_total == 0:
        return 0.0
    precision = matches / cand_total
    recall = matches / ref_total
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def rouge_n(candidate, reference, n: int) -> float:
    """Clipped n-gram overlap F1."""
    cand = ngram_counts(list(candidate), n)
    ref = ngram_counts(list(reference), n)
    matches = sum(min(c, ref[g]) for g, c in cand.items())
    return _f1(matches, sum(cand.values()), sum(ref.values()))


def lcs_length(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    """Longest-common-subsequence F1."""
    candidate, reference = list(candidate), list(reference)
    return _f1(lcs_length(candidate, reference), len(candidate), len(reference))


def ted_metrics(generated_tree: Tree, exemplar_tree: Tree, reference_tree: Tree):
    """(TED-E, TED-R): skeleton edit distance of the generation's parse to
    the exemplar's and to the reference's."""
    gen = strip_terminals(generated_tree)
    return (
        ted(gen, strip_terminals(exemplar_tree)),
        ted(gen, strip_terminals(reference_tree)),
    )


def permutation_test(scores_a, scores_b, iterations: int = 20000, alpha: float = 0.05, seed: int = 0):
    """Two-sided paired permutation test on the mean difference.

    Enumerates all sign assignments when 2^n fits in ``iterations``,
    otherwise uses a seeded Monte Carlo estimate.  Returns (p, significant).
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"paired score lists must match: {a.shape} vs {b.shape}")
    diffs = a - b
    n = len(diffs)
    observed = abs(diffs.mean())
    tol = 1e-12
    if n <= 30 and 2**n <= iterations:
        hits = 0
        for signs in itertools.product((1.0, -1.0), repeat=n):
            if abs(np.dot(signs, diffs) / n) >= observed - tol:
                hits += 1
        p = hits / 2**n
    else:
        rng = np.random.default_rng(seed)
        signs = rng.choice((1.0, -1.0), size=(iterations, n))
        perm = np.abs(signs @ diffs / n)
        p = (1 + int((perm >= observed - tol).sum())) / (iterations + 1)
    return p, p < alpha


@dataclass
class SystemScores:
    """Per-example metric lists plus the token pairs for corpus BLEU."""

    per_example: dict
    bleu_pairs: list


def score_system(outputs, triples, output_trees) -> SystemScores:
    """Per-example metrics of system ``outputs`` against the triples.

    ``output_trees`` supplies the parse of each output line (for the two
    TED columns); all three lists must align.
    """
    from .textproc import tokenize

    if not (len(outputs) == len(triples) == len(output_trees)):
        raise DataError(
            f"outputs ({len(outputs)}), triples ({len(triples)}) and trees "
            f"({len(output_trees)}) must align"
        )
    per = {name: [] for name in METRIC_NAMES}
    pairs = []
    for out, triple, out_tree in zip(outputs, triples, output_trees):
        cand = tokenize(out)
        ref = tokenize(triple.reference)
        pairs.append((cand, ref))
        per["BLEU"].append(bleu(cand, ref))
        per["ROUGE-1"].append(rouge_n(cand, ref, 1))
        per["ROUGE-2"].append(rouge_n(cand, ref, 2))
        per["ROUGE-L"].append(rouge_l(cand, ref))
        ted_e, ted_r = ted_metrics(out_tree, triple.exemplar_tree, triple.reference_tree)
        per["TED-E"].append(float(ted_e))
        per["TED-R"].append(float(ted_r))
    return SystemScores(per, pairs)


def aggregate(scores: SystemScores, bleu_mode: str = "corpus") -> dict:
    """Mean of per-example metrics; BLEU from pooled counts unless
    ``bleu_mode='sentence'``."""
    if bleu_mode not in ("corpus", "sentence"):
        raise ValueError(f"unknown bleu_mode {bleu_mode!r}")
    agg = {name: float(np.mean(vals)) for name, vals in scores.per_example.items()}
    if bleu_mode == "corpus":
        agg["BLEU"] = corpus_bleu(scores.bleu_pairs)
    return agg


def baselines(triples) -> list[tuple[str, SystemScores]]:
    """Source-as-Output and Exemplar-as-Output rows."""
    source_row = score_system(
        [t.source for t in triples], triples, [t.source_tree for t in triples]
    )
    exemplar_row = score_system(
        [t.exemplar for t in triples], triples, [t.exemplar_tree for t in triples]
    )
    return [("Source-as-Output", source_row), ("Exemplar-as-Output", exemplar_row)]


@dataclass
class MetricReport:
    """Named rows of the six metrics, renderable as text or TSV.

    Alignment metrics are stored in [0, 1] and rendered x100; TED columns
    are plain means.
    """

    rows: list

    @staticmethod
    def _display(name: str, value: float) -> float:
        return value * 100.0 if name.startswith(("BLEU", "ROUGE")) else value

    def to_tsv(self) -> str:
        lines = ["system\t" + "\t".join(METRIC_NAMES)]
        for name, metrics in self.rows:
            cells = [f"{self._display(m, metrics[m]):.6f}" for m in METRIC_NAMES]
            lines.append(name + "\t" + "\t".join(cells))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        headers = ["system"] + list(METRIC_NAMES)
        table = [headers]
        for name, metrics in self.rows:
            table.append([name] + [f"{self._display(m, metrics[m]):.2f}" for m in METRIC_NAMES])
        widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
        lines = []
        for i, row in enumerate(table):
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def build_report(named_scores, bleu_mode: str = "corpus") -> MetricReport:
    return MetricReport([(name, aggregate(s, bleu_mode)) for name, s in named_scores])

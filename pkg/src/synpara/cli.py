"""Command-line surface: preprocess, train, generate, evaluate,
build-dataset and inspect-tree.

Configuration is a flat ``key = value`` file; command-line flags override
file values, and the merged view is echoed next to every command's
outputs for reproducibility.  All randomness in a command flows from one
generator seeded by ``--seed`` (or the config's ``seed``).

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys

import numpy as np

from . import dataset as ds
from . import inference, metrics, trees
from .errors import DataError, NumericError
from .model import Model, ModelConfig
from .textproc import BpeModel, Vocab, build_vocab, encode, tokenize, train_bpe, vocab_counts_from_corpus
from .training import CorpusEntry, SkipExample, TrainConfig, label_vocabulary, make_training_example, train
from .trees import TreeParseError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


CONFIG_DEFAULTS = {
    "lr": "7e-5",
    "tf_ratio": "0.9",
    "max_len": "60",
    "batch": "32",
    "epochs": "10",
    "seed": "0",
    "hidden": "128",
    "emb": "300",
    "vocab_cap": "24000",
    "merges": "10000",
    "val_frac": "0.1",
    "beam": "5",
    "test_n": "3000",
    "val_n": "3000",
    "bleu_mode": "corpus",
    "data": "",
}


def parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def merged_config(args) -> dict[str, str]:
    cfg = dict(CONFIG_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for flag in ("seed", "height", "beam", "mode"):
        value = getattr(args, flag, None)
        if value is not None:
            cfg[flag] = str(value)
    return cfg


def _train_config(cfg: dict[str, str]) -> TrainConfig:
    try:
        return TrainConfig(
            lr=float(cfg["lr"]),
            tf_ratio=float(cfg["tf_ratio"]),
            max_len=int(cfg["max_len"]),
            batch=int(cfg["batch"]),
            epochs=int(cfg["epochs"]),
            seed=int(cfg["seed"]),
            hidden=int(cfg["hidden"]),
            emb=int(cfg["emb"]),
            vocab_cap=int(cfg["vocab_cap"]),
            merges=int(cfg["merges"]),
            val_frac=float(cfg["val_frac"]),
            beam=int(cfg["beam"]),
        )
    except ValueError as exc:
        raise UsageError(f"bad configuration value: {exc}") from exc


def _cfg_int(cfg: dict[str, str], key: str) -> int:
    try:
        return int(cfg[key])
    except (KeyError, ValueError) as exc:
        raise UsageError(f"configuration key {key!r} must be an integer: {exc}") from exc


def _echo_config(cfg: dict[str, str], out_dir) -> None:
    with open(os.path.join(out_dir, "run_config.txt"), "w", encoding="utf-8") as fh:
        for key in sorted(cfg):
            fh.write(f"{key} = {cfg[key]}\n")


def _require(args, out=True, **flags) -> None:
    for name, value in flags.items():
        if value is None:
            raise UsageError(f"--{name} is required for this command")
    if out and args.out is None:
        raise UsageError("--out is required for this command")


def _ensure_out(path) -> None:
    os.makedirs(path, exist_ok=True)


def _read_pair_file(pairs_path, trees_path):
    """Aligned (source, target) pairs with both trees; errors name lines."""
    if not os.path.exists(pairs_path):
        raise DataError(f"pair file not found: {pairs_path}")
    if not os.path.exists(trees_path):
        raise DataError(f"tree file not found: {trees_path}")
    with open(pairs_path, encoding="utf-8") as fh:
        pair_lines = [line.rstrip("\n") for line in fh if line.strip()]
    with open(trees_path, encoding="utf-8") as fh:
        tree_lines = [line.rstrip("\n") for line in fh if line.strip()]
    if len(tree_lines) != len(pair_lines):
        missing = min(len(tree_lines), len(pair_lines)) + 1
        raise DataError(
            f"{trees_path}: tree/pair misalignment at line {missing} "
            f"({len(pair_lines)} pairs vs {len(tree_lines)} tree lines)"
        )
    out = []
    for lineno, (pline, tline) in enumerate(zip(pair_lines, tree_lines), start=1):
        pcols = pline.split("\t")
        tcols = tline.split("\t")
        if len(pcols) != 2:
            raise DataError(f"{pairs_path}:{lineno}: expected 2 tab-separated columns")
        if len(tcols) != 2:
            raise DataError(f"{trees_path}:{lineno}: expected 2 tab-separated trees")
        out.append((pcols[0], pcols[1], trees.parse_bracketed(tcols[0]), trees.parse_bracketed(tcols[1])))
    return out


def _sidecar_trees_path(path) -> str:
    return str(path) + ".trees"


# --- commands ---------------------------------------------------------------


def cmd_preprocess(args) -> int:
    _require(args, pairs=args.pairs, trees=args.trees)
    cfg = merged_config(args)
    tc = _train_config(cfg)
    _ensure_out(args.out)

    rows = _read_pair_file(args.pairs, args.trees)
    sentences = [r[0] for r in rows] + [r[1] for r in rows]
    bpe = train_bpe([tokenize(s) for s in sentences], tc.merges)
    vocab = build_vocab(vocab_counts_from_corpus(bpe, sentences), tc.vocab_cap)
    labels = label_vocabulary([r[2] for r in rows] + [r[3] for r in rows])

    kept = []
    skip_reasons: dict[str, int] = {}
    for source, target, _, target_tree in rows:
        try:
            make_training_example((source, target), bpe, vocab, target_tree, 1, tc.max_len)
        except SkipExample as exc:
            reason = str(exc).split(":")[0]
            skip_reasons[reason] = skip_reasons.get(reason, 0) + 1
            continue
        kept.append((source, target, target_tree))

    bpe.save(os.path.join(args.out, "bpe.txt"))
    vocab.save(os.path.join(args.out, "vocab.txt"))
    with open(os.path.join(args.out, "labels.txt"), "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(lab + "\n")
    with open(os.path.join(args.out, "corpus.jsonl"), "w", encoding="utf-8") as fh:
        for source, target, target_tree in kept:
            record = {
                "source": source,
                "source_ids": encode(bpe, vocab, source),
                "target": target,
                "target_ids": encode(bpe, vocab, target),
                "tree": trees.serialize(target_tree),
            }
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    meta = {
        "pairs": len(rows),
        "kept": len(kept),
        "skipped": len(rows) - len(kept),
        "skip_reasons": dict(sorted(skip_reasons.items())),
    }
    with open(os.path.join(args.out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _echo_config(cfg, args.out)
    print(f"preprocess: kept {len(kept)} of {len(rows)} pairs -> {args.out}")
    return 0


def _load_preprocessed(data_dir):
    for name in ("bpe.txt", "vocab.txt", "labels.txt", "corpus.jsonl"):
        if not os.path.exists(os.path.join(data_dir, name)):
            raise DataError(f"preprocessed data dir {data_dir} is missing {name}")
    bpe = BpeModel.load(os.path.join(data_dir, "bpe.txt"))
    vocab = Vocab.load(os.path.join(data_dir, "vocab.txt"))
    with open(os.path.join(data_dir, "labels.txt"), encoding="utf-8") as fh:
        labels = tuple(line.rstrip("\n") for line in fh if line.strip())
    entries = []
    with open(os.path.join(data_dir, "corpus.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            entries.append(
                CorpusEntry(record["source"], record["target"], trees.parse_bracketed(record["tree"]))
            )
    return bpe, vocab, labels, entries


def cmd_train(args) -> int:
    cfg = merged_config(args)
    tc = _train_config(cfg)
    data_dir = cfg.get("data") or ""
    if not data_dir:
        raise UsageError("config key 'data' must point to a preprocess output directory")
    _require(args)
    _ensure_out(args.out)

    bpe, vocab, labels, entries = _load_preprocessed(data_dir)
    model_cfg = ModelConfig(
        vocab_size=len(vocab), label_vocab=labels, hidden=tc.hidden, emb=tc.emb, max_len=tc.max_len
    )
    rng = np.random.default_rng(tc.seed)
    model = Model.create(model_cfg, rng)
    history = train(
        model, entries, bpe, vocab, tc, rng, out_dir=args.out,
        log=lambda msg: print(f"train: {msg}"),
    )
    for name in ("bpe.txt", "vocab.txt", "labels.txt"):
        shutil.copyfile(os.path.join(data_dir, name), os.path.join(args.out, name))
    _echo_config(cfg, args.out)
    final = history[-1]["loss"] if history else float("nan")
    print(f"train: {len(history)} steps, final loss {final:.6g} -> {args.out}")
    return 0


def _load_run(checkpoint_path):
    run_dir = os.path.dirname(os.path.abspath(checkpoint_path))
    model = Model.load(checkpoint_path)
    bpe = BpeModel.load(os.path.join(run_dir, "bpe.txt"))
    vocab = Vocab.load(os.path.join(run_dir, "vocab.txt"))
    return model, bpe, vocab


def cmd_generate(args) -> int:
    _require(args, checkpoint=args.checkpoint, triples=args.triples)
    cfg = merged_config(args)
    _ensure_out(args.out)
    mode = cfg.get("mode", "F").upper()
    if mode not in ("F", "R"):
        raise UsageError(f"--mode must be F or R, got {mode!r}")
    beam = _cfg_int(cfg, "beam")
    height_override = _cfg_int(cfg, "height") if cfg.get("height") else None

    model, bpe, vocab = _load_run(args.checkpoint)
    trees_path = args.trees or _sidecar_trees_path(args.triples)
    triples = ds.read_triples(args.triples, trees_path)

    lines = []
    for triple in triples:
        if mode == "F":
            gen = inference.generate_f(
                model, bpe, vocab, triple.source, triple.exemplar_tree, height_override, beam
            )
        else:
            gen = inference.generate_r(model, bpe, vocab, triple.source, triple.exemplar_tree, beam)
        lines.append(f"{triple.source}\t{triple.exemplar}\t{gen.height_used}\t{gen.text}")
    out_path = os.path.join(args.out, "generations.tsv")
    with open(out_path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
    _echo_config(cfg, args.out)
    print(f"generate: {len(lines)} sentences ({mode}) -> {out_path}")
    return 0


def _read_generations(path):
    if not os.path.exists(path):
        raise DataError(f"generations file not found: {path}")
    outputs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated columns")
            outputs.append(cols[3])
    return outputs


def cmd_evaluate(args) -> int:
    _require(args, triples=args.triples, trees=args.trees)
    if not args.generations:
        raise UsageError("evaluate needs the generations file as a positional argument")
    cfg = merged_config(args)
    _ensure_out(args.out)

    triples = ds.read_triples(args.triples, _sidecar_trees_path(args.triples))
    outputs = _read_generations(args.generations)
    gen_trees = trees.read_tree_file(args.trees)
    if not (len(outputs) == len(triples) == len(gen_trees)):
        raise DataError(
            f"alignment: {len(outputs)} generations, {len(triples)} triples, "
            f"{len(gen_trees)} generation trees"
        )
    rows = metrics.baselines(triples)
    rows.append(("system", metrics.score_system(outputs, triples, gen_trees)))
    report = metrics.build_report(rows, bleu_mode=cfg["bleu_mode"])
    with open(os.path.join(args.out, "report.tsv"), "w", encoding="utf-8") as fh:
        fh.write(report.to_tsv())
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    _echo_config(cfg, args.out)
    sys.stdout.write(report.to_text())
    return 0


def cmd_build_dataset(args) -> int:
    _require(args, pairs=args.pairs, trees=args.trees)
    cfg = merged_config(args)
    _ensure_out(args.out)
    test_n = _cfg_int(cfg, "test_n")
    val_n = _cfg_int(cfg, "val_n")
    rng = np.random.default_rng(_cfg_int(cfg, "seed"))

    pairs, over_length = ds.load_pair_corpus(args.pairs, args.trees)
    triples, skipped = ds.build_eval_set(pairs)
    test, val = ds.split_eval_set(triples, test_n, val_n, rng)
    ds.write_triples(
        test,
        os.path.join(args.out, "test_triples.tsv"),
        os.path.join(args.out, "test_triples.tsv.trees"),
    )
    ds.write_triples(
        val,
        os.path.join(args.out, "val_triples.tsv"),
        os.path.join(args.out, "val_triples.tsv.trees"),
    )
    meta = {
        "pairs": len(pairs),
        "over_length_dropped": over_length,
        "triples": len(triples),
        "no_candidate_skipped": skipped,
        "test": len(test),
        "validation": len(val),
    }
    with open(os.path.join(args.out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _echo_config(cfg, args.out)
    print(f"build-dataset: {len(test)} test / {len(val)} validation triples -> {args.out}")
    return 0


def cmd_inspect_tree(args) -> int:
    _require(args, out=False, trees=args.trees)
    if args.height is None:
        raise UsageError("--height is required for inspect-tree")
    full_trees = trees.read_tree_file(args.trees)
    if not full_trees:
        raise DataError(f"{args.trees}: no trees found")
    for i, full in enumerate(full_trees, start=1):
        if not full.terminals():
            raise DataError(f"{args.trees}: tree {i} carries no tokens; spans need a full parse")
        skel = trees.strip_terminals(full)
        pruned = trees.prune(skel, args.height)
        sv = trees.leaf_spans(full, args.height)
        leaves = [n.label for n in trees.leaf_queue(pruned)]
        print(f"tree {i}: height {trees.height(skel)}, pruned at H={args.height}")
        print(trees.serialize(pruned.skeleton))
        print("leaves: " + " ".join(leaves))
        print("spans: " + " ".join(f"{a}-{b}" for a, b in sv.spans))
        print("a: " + " ".join(str(b) for b in sv.bits))
    return 0


# --- entry point ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="synpara", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command")

    def common(p, generations=False):
        p.add_argument("--config", help="flat key = value configuration file")
        p.add_argument("--seed", type=int, help="seed for every stochastic choice")
        p.add_argument("--height", type=int, help="pruning height H")
        p.add_argument("--beam", type=int, help="beam width")
        p.add_argument("--mode", choices=["F", "R", "f", "r"], help="generation variant")
        p.add_argument("--out", help="output directory")
        p.add_argument("--checkpoint", help="model checkpoint file")
        p.add_argument("--pairs", help="tab-separated sentence-pair file")
        p.add_argument("--trees", help="bracketed tree file")
        p.add_argument("--triples", help="tab-separated triple file (sidecar .trees expected)")
        if generations:
            p.add_argument("generations", nargs="?", help="generations.tsv produced by generate")

    common(sub.add_parser("preprocess", help="tokenize, learn BPE, build vocabularies"))
    common(sub.add_parser("train", help="optimize a model on a preprocessed corpus"))
    common(sub.add_parser("generate", help="decode paraphrases for evaluation triples"))
    common(sub.add_parser("evaluate", help="score generations against triples"), generations=True)
    common(sub.add_parser("build-dataset", help="construct evaluation triples from pairs"))
    common(sub.add_parser("inspect-tree", help="show a pruned tree, its leaf queue and spans"))
    return parser


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "build-dataset": cmd_build_dataset,
    "inspect-tree": cmd_inspect_tree,
}


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required (see --help)")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 1
    except (DataError, TreeParseError, FileNotFoundError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

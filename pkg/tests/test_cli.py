import json
import subprocess
import sys
from collections import Counter
from pathlib import Path

from synpara import cli, trees
from synpara.textproc import BpeModel, tokenize

from conftest import FIXTURES, load_toy_corpus

PAIRS = str(FIXTURES / "toy_pairs.tsv")
TREES = str(FIXTURES / "toy_pairs.tsv.trees")
QUESTION = str(FIXTURES / "question.trees")

TINY_CFG = """
# toy-scale settings
lr = 1e-3
epochs = 1
batch = 8
hidden = 8
emb = 10
merges = 120
vocab_cap = 200
val_frac = 0.25
seed = 3
test_n = 6
val_n = 2
"""


def _write_cfg(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(TINY_CFG + extra, encoding="utf-8")
    return str(path)


def test_inspect_tree_question_fixture(capsys):
    rc = cli.main(["inspect-tree", "--trees", QUESTION, "--height", "3"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "leaves: WP VBZ NP <DOT>" in out
    assert "a: 1 1 1 0 0 0 0 0 1" in out
    assert "spans: 1-1 2-2 3-8 9-9" in out


def test_inspect_tree_requires_height(capsys):
    rc = cli.main(["inspect-tree", "--trees", QUESTION])
    assert rc == 1
    assert "usage" in capsys.readouterr().err


def test_missing_command_is_usage_error(capsys):
    assert cli.main([]) == 1


def test_unknown_flag_is_usage_error():
    assert cli.main(["preprocess", "--bogus"]) == 1


def test_preprocess_deterministic(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = cli.main(
            ["preprocess", "--pairs", PAIRS, "--trees", TREES, "--config", cfg, "--out", str(out)]
        )
        assert rc == 0
        outs.append(out)
    for fname in ("bpe.txt", "vocab.txt", "labels.txt", "corpus.jsonl", "meta.json"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
    # the merged configuration is echoed next to the outputs
    echo = (outs[0] / "run_config.txt").read_text()
    assert "merges = 120" in echo and "seed = 3" in echo


def test_preprocess_vocab_matches_counting_oracle(tmp_path):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "pre"
    assert cli.main(["preprocess", "--pairs", PAIRS, "--trees", TREES, "--config", cfg, "--out", str(out)]) == 0
    bpe = BpeModel.load(out / "bpe.txt")
    vocab_lines = (out / "vocab.txt").read_text().splitlines()
    counts = Counter()
    for line in Path(PAIRS).read_text().splitlines():
        for sentence in line.split("\t"):
            for word in tokenize(sentence):
                counts.update(bpe.segment(word))
    expected = [t for t, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]
    assert vocab_lines[4:] == expected[: len(vocab_lines) - 4]


def test_preprocess_missing_tree_line(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    bad_trees = tmp_path / "short.trees"
    lines = Path(TREES).read_text().splitlines()
    bad_trees.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    rc = cli.main(
        ["preprocess", "--pairs", PAIRS, "--trees", str(bad_trees), "--config", cfg, "--out", str(tmp_path / "x")]
    )
    err = capsys.readouterr().err
    assert rc == 2
    assert "line 32" in err


def test_train_requires_data_key(tmp_path):
    cfg = _write_cfg(tmp_path)
    rc = cli.main(["train", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 1


def test_build_dataset_produces_triples(tmp_path):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "ds"
    rc = cli.main(
        ["build-dataset", "--pairs", PAIRS, "--trees", TREES, "--config", cfg, "--out", str(out)]
    )
    assert rc == 0
    triples = (out / "test_triples.tsv").read_text().splitlines()
    assert len(triples) == 6
    tree_lines = (out / "test_triples.tsv.trees").read_text().splitlines()
    assert len(tree_lines) == 6
    assert all(len(line.split("\t")) == 3 for line in triples)
    meta = json.loads((out / "meta.json").read_text())
    assert meta["test"] == 6 and meta["validation"] == 2


def test_end_to_end_pipeline_smoke(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    pre = tmp_path / "pre"
    run = tmp_path / "run"
    ds_out = tmp_path / "ds"
    gen_out = tmp_path / "gen"
    eval_out = tmp_path / "eval"

    assert cli.main(["preprocess", "--pairs", PAIRS, "--trees", TREES, "--config", cfg, "--out", str(pre)]) == 0
    train_cfg = _write_cfg(tmp_path, extra=f"data = {pre}\n")
    assert cli.main(["train", "--config", train_cfg, "--out", str(run)]) == 0
    assert (run / "best.ckpt").exists() and (run / "loss_log.tsv").exists()

    assert cli.main(["build-dataset", "--pairs", PAIRS, "--trees", TREES, "--config", cfg, "--out", str(ds_out)]) == 0
    assert (
        cli.main(
            [
                "generate",
                "--checkpoint", str(run / "best.ckpt"),
                "--triples", str(ds_out / "test_triples.tsv"),
                "--config", cfg,
                "--mode", "F",
                "--beam", "2",
                "--out", str(gen_out),
            ]
        )
        == 0
    )
    gen_lines = (gen_out / "generations.tsv").read_text().splitlines()
    assert len(gen_lines) == 6
    assert all(len(line.split("\t")) == 4 for line in gen_lines)

    # stand-in for the external parser: look each generation up in the
    # corpus tree bank, falling back to its exemplar's tree
    tree_of = {}
    for src, tgt, src_tree, tgt_tree in load_toy_corpus():
        tree_of.setdefault(src, src_tree)
        tree_of.setdefault(tgt, tgt_tree)
    exemplar_trees = [
        trees.parse_bracketed(line.split("\t")[1])
        for line in (ds_out / "test_triples.tsv.trees").read_text().splitlines()
    ]
    gen_trees = []
    for line, fallback in zip(gen_lines, exemplar_trees):
        sentence = line.split("\t")[3]
        gen_trees.append(tree_of.get(sentence, fallback))
    trees.write_tree_file(gen_out / "generations.tsv.trees", gen_trees)

    assert (
        cli.main(
            [
                "evaluate",
                str(gen_out / "generations.tsv"),
                "--triples", str(ds_out / "test_triples.tsv"),
                "--trees", str(gen_out / "generations.tsv.trees"),
                "--config", cfg,
                "--out", str(eval_out),
            ]
        )
        == 0
    )
    report = (eval_out / "report.tsv").read_text()
    header = report.splitlines()[0].split("\t")
    assert header == ["system", "BLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "TED-R", "TED-E"]
    body = report.splitlines()[1:]
    assert [row.split("\t")[0] for row in body] == ["Source-as-Output", "Exemplar-as-Output", "system"]
    # exemplar row reproduces its own tree exactly
    assert float(body[1].split("\t")[6]) == 0.0


def test_generate_mode_f_equals_library_call(tmp_path):
    # the command is a thin pass-through over the library generate call
    cfg = _write_cfg(tmp_path)
    pre = tmp_path / "pre"
    run = tmp_path / "run"
    assert cli.main(["preprocess", "--pairs", PAIRS, "--trees", TREES, "--config", cfg, "--out", str(pre)]) == 0
    train_cfg = _write_cfg(tmp_path, extra=f"data = {pre}\n")
    assert cli.main(["train", "--config", train_cfg, "--out", str(run)]) == 0

    ds_out = tmp_path / "ds"
    assert cli.main(["build-dataset", "--pairs", PAIRS, "--trees", TREES, "--config", cfg, "--out", str(ds_out)]) == 0
    gen_out = tmp_path / "gen"
    assert (
        cli.main(
            [
                "generate",
                "--checkpoint", str(run / "best.ckpt"),
                "--triples", str(ds_out / "test_triples.tsv"),
                "--config", cfg,
                "--mode", "F",
                "--height", "2",
                "--beam", "2",
                "--out", str(gen_out),
            ]
        )
        == 0
    )
    from synpara import inference
    from synpara.dataset import read_triples

    model, bpe, vocab = cli._load_run(str(run / "best.ckpt"))
    triples = read_triples(ds_out / "test_triples.tsv", ds_out / "test_triples.tsv.trees")
    lines = (gen_out / "generations.tsv").read_text().splitlines()
    for triple, line in zip(triples, lines):
        expected = inference.generate_f(model, bpe, vocab, triple.source, triple.exemplar_tree, 2, 2)
        cols = line.split("\t")
        assert cols[3] == expected.text
        assert int(cols[2]) == expected.height_used


def test_commands_do_not_mutate_inputs(tmp_path):
    cfg = _write_cfg(tmp_path)
    before_pairs = Path(PAIRS).read_bytes()
    before_trees = Path(TREES).read_bytes()
    assert cli.main(["preprocess", "--pairs", PAIRS, "--trees", TREES, "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    assert cli.main(["build-dataset", "--pairs", PAIRS, "--trees", TREES, "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    assert Path(PAIRS).read_bytes() == before_pairs
    assert Path(TREES).read_bytes() == before_trees
    # outputs land only under --out
    assert set(p.name for p in (tmp_path / "p").iterdir()) >= {"bpe.txt", "vocab.txt", "corpus.jsonl"}


def test_numeric_error_exit_code(monkeypatch, capsys):
    from synpara.errors import NumericError

    def exploding(args):
        raise NumericError("non-finite training loss")

    monkeypatch.setitem(cli.COMMANDS, "train", exploding)
    rc = cli.main(["train"])
    err = capsys.readouterr().err
    assert rc == 3
    assert err.startswith("error: numeric:")


def test_console_module_entry():
    proc = subprocess.run(
        [sys.executable, "-m", "synpara.cli", "inspect-tree", "--trees", QUESTION, "--height", "1"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "leaves: SBARQ" in proc.stdout

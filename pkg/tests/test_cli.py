"""End-to-end tests for the command-line interface."""

import pytest

from pagen import cli
from pagen import corpus as C

TOY_CONFIG = """\
variant=CVAE
word_embed_dim=8
user_embed_dim=6
encoder_hidden=8
decoder_hidden=12
z_dim=4
bow_hidden=10
anneal_batches=50
batch_size=32
epochs=1
max_batches=6
lr=0.002
train_ratio=0.9
max_vocab=500
"""


@pytest.fixture
def workdir(tmp_path):
    data = tmp_path / "corpus.tsv"
    C.write_corpus(data, C.generate_synthetic(3, 40, 0.9, seed=2))
    config = tmp_path / "toy.cfg"
    config.write_text(TOY_CONFIG, encoding="utf-8")
    return tmp_path, data, config


def _trained(workdir, seed=0, variant=None):
    tmp_path, data, config = workdir
    out = tmp_path / "run"
    argv = ["train", "--config", str(config), "--data", str(data),
            "--out", str(out), "--seed", str(seed)]
    if variant:
        argv += ["--variant", variant]
    assert cli.main(argv) == 0
    return out


def test_fnv1a64_reference_values():
    # published FNV-1a test vectors
    assert cli.fnv1a64(b"") == 0xCBF29CE484222325
    assert cli.fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_gen_corpus(tmp_path, capsys):
    out = tmp_path / "c.tsv"
    assert cli.main(["gen-corpus", "--out", str(out), "--users", "3",
                     "--triples-per-user", "5", "--seed", "1"]) == 0
    triples = C.read_triples(out)
    assert len(triples) == 15
    assert "wrote 15 triples" in capsys.readouterr().out


def test_train_outputs(workdir):
    out = _trained(workdir)
    for name in ("model.ckpt", "train.tsv", "test.tsv", "vocab.txt", "users.txt",
                 "history.csv", "manifest.txt"):
        assert (out / name).exists(), name
    manifest = dict(line.split("=", 1) for line in
                    (out / "manifest.txt").read_text().splitlines())
    assert manifest["command"] == "train"
    assert manifest["checkpoint_hash"] == cli.file_hash(out / "model.ckpt")


def test_train_missing_data_exits_2(workdir, capsys):
    tmp_path, _, config = workdir
    code = cli.main(["train", "--config", str(config), "--data",
                     str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "error:" in err


def test_bad_config_key_exits_1(workdir, capsys):
    tmp_path, data, _ = workdir
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_option=1\n", encoding="utf-8")
    assert cli.main(["train", "--config", str(bad), "--data", str(data),
                     "--out", str(tmp_path / "o")]) == 1
    assert "no_such_option" in capsys.readouterr().err


def test_train_variant_override(workdir):
    from pagen.model import load_checkpoint
    out = _trained(workdir, variant="PAGENERATOR_NO_UE")
    _, cfg = load_checkpoint(out / "model.ckpt")
    assert cfg.variant == "PAGENERATOR"
    assert not cfg.decode_with_user


def test_generate_single_query(workdir, capsys):
    out = _trained(workdir)
    assert cli.main(["generate", "--model", str(out / "model.ckpt"),
                     "--user", "user1", "--query", "topic0 q1 q2",
                     "--beam", "3", "--max-length", "8", "--seed", "4"]) == 0
    reply = capsys.readouterr().out.strip()
    assert reply
    assert "<" not in reply  # no reserved tokens in the text


def test_generate_batch_mode(workdir):
    tmp_path, _, _ = workdir
    out = _trained(workdir)
    batch_in = tmp_path / "queries.tsv"
    batch_in.write_text("user0\ttopic1 q3\nuser2\ttopic2 q4 q5\n", encoding="utf-8")
    batch_out = tmp_path / "replies.txt"
    assert cli.main(["generate", "--model", str(out / "model.ckpt"),
                     "--input", str(batch_in), "--output", str(batch_out),
                     "--beam", "3", "--max-length", "8"]) == 0
    lines = batch_out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2


def test_generate_without_query_exits_2(workdir, capsys):
    out = _trained(workdir)
    assert cli.main(["generate", "--model", str(out / "model.ckpt")]) == 2
    assert "--query or --input" in capsys.readouterr().err


def test_evaluate_and_report(workdir, capsys):
    tmp_path, _, _ = workdir
    out = _trained(workdir)
    eval_dir = tmp_path / "eval"
    assert cli.main(["evaluate", "--model", str(out / "model.ckpt"),
                     "--ref-model", str(out / "model.ckpt"),
                     "--data", str(out / "test.tsv"),
                     "--train-data", str(out / "train.tsv"),
                     "--metrics", "bleu1,uppl", "--out", str(eval_dir)]) == 0
    results = cli.read_report(eval_dir / "report.txt")
    assert "bleu1" in results and "uppl" in results
    assert (eval_dir / "per_item.csv").exists()
    assert (eval_dir / "manifest.txt").exists()
    capsys.readouterr()

    assert cli.main(["report", str(eval_dir)]) == 0
    table = capsys.readouterr().out
    for col in cli.REPORT_COLUMNS:
        assert col in table


def test_report_formats_missing_metrics_as_dash(capsys):
    print(cli.format_table([("partial", {"bleu1": 0.5})]))
    table = capsys.readouterr().out
    assert "0.5000" in table and "-" in table


def test_compare_two_variants(workdir, capsys, monkeypatch):
    tmp_path, data, config = workdir
    monkeypatch.setenv("PAGEN_THREADS", "2")
    out = tmp_path / "cmp"
    assert cli.main(["compare", "--config", str(config), "--data", str(data),
                     "--variants", "S2SA,CVAE", "--reference", "S2SA",
                     "--rounds", "1", "--seed", "1", "--out", str(out)]) == 0
    assert (out / "comparison.csv").exists()
    for variant in ("S2SA", "CVAE"):
        assert (out / variant / "model.ckpt").exists()
        assert (out / variant / "eval" / "report.txt").exists()
    table = capsys.readouterr().out
    assert "S2SA" in table and "CVAE" in table


def test_compare_rejects_single_variant(workdir, capsys):
    tmp_path, data, config = workdir
    assert cli.main(["compare", "--config", str(config), "--data", str(data),
                     "--variants", "S2SA", "--out", str(tmp_path / "x")]) == 2


def test_selfcheck_exit_code(capsys):
    assert cli.main(["selfcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "selfcheck: PASS" in out
    assert "end-to-end" in out

"""Command-line entry point: corpus generation, training, generation,
evaluation, self-checks, report formatting, and variant comparison.

All randomness is seeded from --seed; reports contain no timestamps so a
rerun with identical manifest inputs is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from . import corpus as C
from . import evaluate as E
from . import generation as G
from . import metrics as MX
from . import model as M
from . import selfcheck
from .autodiff import ContractError, ShapeError
from .model import ModelConfig
from .trainer import TrainConfig, train

TRAINER_KEYS = ("batch_size", "epochs", "lr", "clip_norm", "checkpoint_every",
                "max_batches")
DATA_KEYS = ("min_utterances", "train_ratio", "max_vocab", "split_seed")
DATA_DEFAULTS = {"min_utterances": 1, "train_ratio": 0.9, "max_vocab": 20000,
                 "split_seed": 0}

ABLATIONS = {
    "PAGENERATOR_NO_R1": ("PAGENERATOR", {"use_r1": False}),
    "PAGENERATOR_NO_R2": ("PAGENERATOR", {"use_r2": False}),
    "PAGENERATOR_NO_UE": ("PAGENERATOR", {"decode_with_user": False}),
}


def fnv1a64(data):
    """64-bit FNV-1a content hash (provenance, not security)."""
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def file_hash(path):
    with open(path, "rb") as f:
        return f"{fnv1a64(f.read()):016x}"


def write_manifest(path, entries):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for k in sorted(entries):
            f.write(f"{k}={entries[k]}\n")


def read_flat_config(path):
    """Flat key=value file split into model / trainer / data settings."""
    model_kwargs, trainer_kwargs, data_kwargs = {}, dict(), dict(DATA_DEFAULTS)
    model_fields = ModelConfig.__dataclass_fields__
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, sep, v = line.partition("=")
            k, v = k.strip(), v.strip()
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            if k in model_fields:
                ftype = model_fields[k].type
                if ftype in ("bool", bool):
                    model_kwargs[k] = v == "true"
                elif ftype in ("int", int):
                    model_kwargs[k] = int(v)
                elif ftype in ("float", float):
                    model_kwargs[k] = float(v)
                else:
                    model_kwargs[k] = v
            elif k in TRAINER_KEYS:
                trainer_kwargs[k] = float(v) if k in ("lr", "clip_norm") else int(v)
            elif k in DATA_KEYS:
                data_kwargs[k] = float(v) if k == "train_ratio" else int(v)
            else:
                raise ValueError(f"{path}:{lineno}: unknown config key {k!r}")
    return model_kwargs, trainer_kwargs, data_kwargs


def prepare_data(data_path, data_kwargs):
    triples, _, _ = C.load_corpus(data_path, min_utterances=data_kwargs["min_utterances"],
                                  max_vocab=data_kwargs["max_vocab"])
    train_set, test_set = C.split(triples, data_kwargs["train_ratio"],
                                  seed=data_kwargs["split_seed"])
    vocab = C.Vocabulary.build(train_set, max_size=data_kwargs["max_vocab"])
    users = C.UserTable.build({t.user_id for t in triples} - {C.UNSPECIFIED_USER_ID})
    return train_set, test_set, vocab, users


def run_training(data_path, config_path, out_dir, seed, variant=None):
    model_kwargs, trainer_kwargs, data_kwargs = read_flat_config(config_path)
    if variant:
        base, extra = ABLATIONS.get(variant, (variant, {}))
        model_kwargs["variant"] = base
        model_kwargs.update(extra)
    train_set, test_set, vocab, users = prepare_data(data_path, data_kwargs)
    model_kwargs["vocab_size"] = len(vocab)
    model_kwargs["num_users"] = len(users)
    config = ModelConfig(**model_kwargs)
    tcfg = TrainConfig(**trainer_kwargs)

    os.makedirs(out_dir, exist_ok=True)
    C.write_corpus(os.path.join(out_dir, "train.tsv"), train_set)
    C.write_corpus(os.path.join(out_dir, "test.tsv"), test_set)
    C.save_vocab(os.path.join(out_dir, "vocab.txt"), vocab)
    C.save_users(os.path.join(out_dir, "users.txt"), users)
    ckpt, history = train(train_set, vocab, users, config, tcfg, seed, out_dir)
    write_manifest(os.path.join(out_dir, "manifest.txt"), {
        "command": "train",
        "config_hash": file_hash(config_path),
        "corpus_hash": file_hash(data_path),
        "seed": seed,
        "checkpoint_hash": file_hash(ckpt),
        "version": __version__,
    })
    return ckpt, history


def load_model_dir(ckpt_path, vocab_path=None, users_path=None):
    params, config = M.load_checkpoint(ckpt_path)
    base = os.path.dirname(ckpt_path)
    vocab = C.load_vocab(vocab_path or os.path.join(base, "vocab.txt"))
    users = C.load_users(users_path or os.path.join(base, "users.txt"))
    return (params, config), vocab, users


REPORT_COLUMNS = ("BLEU", "Average", "Extreme", "Greedy", "uRank", "uPPL",
                  "uDist-1", "uDist-2")
REPORT_KEYS = ("bleu1", "embed_average", "embed_extrema", "embed_greedy",
               "urank", "uppl", "udist1", "udist2")


def format_table(rows):
    """rows: list of (label, results dict)."""
    lines = ["{:<22}".format("Method") + "".join(f"{c:>10}" for c in REPORT_COLUMNS)]
    for label, res in rows:
        cells = []
        for key in REPORT_KEYS:
            v = res.get(key)
            cells.append(f"{v:>10.4f}" if v is not None and np.isfinite(v) else f"{'-':>10}")
        lines.append(f"{label:<22}" + "".join(cells))
    return "\n".join(lines)


def write_report(out_dir, results, rows, manifest):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8", newline="\n") as f:
        for k in sorted(results):
            f.write(f"{k}={results[k]!r}\n")
    with open(os.path.join(out_dir, "per_item.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("item", "metric", "value"))
        for r in rows:
            w.writerow([r[0], r[1], repr(r[2])])
    write_manifest(os.path.join(out_dir, "manifest.txt"), manifest)


def read_report(path):
    results = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            k, _, v = line.strip().partition("=")
            if k:
                try:
                    results[k] = float(v)
                except ValueError:
                    results[k] = v
    return results


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_corpus(args):
    triples = C.generate_synthetic(args.users, args.triples_per_user,
                                   args.strength, args.seed)
    C.write_corpus(args.out, triples)
    print(f"wrote {len(triples)} triples to {args.out}")
    return 0


def cmd_train(args):
    ckpt, history = run_training(args.data, args.config, args.out, args.seed,
                                 variant=args.variant)
    print(f"checkpoint: {ckpt} ({len(history)} batches)")
    return 0


def cmd_generate(args):
    model, vocab, users = load_model_dir(args.model, args.vocab, args.users_file)
    params, config = model

    def one(user_id, query_tokens, seed):
        req = G.GenRequest(query=vocab.encode(query_tokens), user_index=users.index(user_id),
                           beam_width=args.beam, max_length=args.max_length,
                           z_mode=args.mode, seed=seed)
        hyps = G.generate(req, params, config)
        return " ".join(vocab.decode(hyps[0].tokens)) if hyps and hyps[0].tokens else ""

    if args.input:
        with open(args.input, encoding="utf-8") as f_in, \
                open(args.output or args.input + ".out", "w", encoding="utf-8",
                     newline="\n") as f_out:
            for i, line in enumerate(f_in):
                if not line.strip():
                    continue
                user_id, _, query = line.rstrip("\n").partition("\t")
                f_out.write(one(user_id, query.split(), args.seed + i) + "\n")
        return 0
    if not args.query:
        print("error: --query or --input required", file=sys.stderr)
        return 2
    print(one(args.user, args.query.split(), args.seed))
    return 0


def cmd_evaluate(args):
    model, vocab, users = load_model_dir(args.model, args.vocab, args.users_file)
    ref_model, _, _ = load_model_dir(args.ref_model, args.vocab or
                                     os.path.join(os.path.dirname(args.model), "vocab.txt"),
                                     args.users_file or
                                     os.path.join(os.path.dirname(args.model), "users.txt"))
    test_set = C.read_triples(args.data)
    train_set = C.read_triples(args.train_data)
    vectors = MX.load_word_vectors(args.vectors) if args.vectors else None
    metric_list = tuple(args.metrics.split(","))
    cfg = MX.MetricConfig(rounds=args.rounds, n_distractors=args.distractors,
                          beam_width=args.beam)
    results, rows = E.evaluate_model(model, ref_model, train_set, test_set, vocab,
                                     users, metric_config=cfg, seed=args.seed,
                                     metrics=metric_list, vectors=vectors)
    manifest = {
        "command": "evaluate",
        "model_hash": file_hash(args.model),
        "ref_model_hash": file_hash(args.ref_model),
        "corpus_hash": file_hash(args.data),
        "seed": args.seed,
        "version": __version__,
    }
    write_report(args.out, results, rows, manifest)
    print(format_table([(os.path.basename(args.model), results)]))
    return 0


def cmd_selfcheck(args):
    ok = selfcheck.run_all(seed=args.seed, verbose=True)
    print("selfcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_report(args):
    rows = []
    for run in args.runs:
        path = os.path.join(run, "report.txt") if os.path.isdir(run) else run
        rows.append((os.path.basename(os.path.dirname(path) or path), read_report(path)))
    print(format_table(rows))
    return 0


def cmd_compare(args):
    variants = args.variants.split(",")
    if len(variants) < 2:
        print("error: compare needs at least 2 variants", file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    workers = max(1, int(os.environ.get("PAGEN_THREADS", "1")))

    def train_one(variant):
        out_dir = os.path.join(args.out, variant)
        run_training(args.data, args.config, out_dir, args.seed, variant=variant)
        return variant, out_dir

    with ThreadPoolExecutor(max_workers=workers) as pool:
        run_dirs = dict(pool.map(train_one, variants))

    ref_name = args.reference if args.reference in run_dirs else variants[0]
    ref_dir = run_dirs[ref_name]
    ref_model, vocab, users = load_model_dir(os.path.join(ref_dir, "model.ckpt"))
    train_set = C.read_triples(os.path.join(ref_dir, "train.tsv"))
    test_set = C.read_triples(os.path.join(ref_dir, "test.tsv"))

    rows = []
    for variant in variants:
        model, _, _ = load_model_dir(os.path.join(run_dirs[variant], "model.ckpt"))
        results, per_item = E.evaluate_model(
            model, ref_model, train_set, test_set, vocab, users,
            metric_config=MX.MetricConfig(rounds=args.rounds), seed=args.seed,
            metrics=("bleu1", "urank", "uppl", "udistinct"))
        write_report(os.path.join(args.out, variant, "eval"), results, per_item, {
            "command": "compare",
            "variant": variant,
            "config_hash": file_hash(args.config),
            "corpus_hash": file_hash(args.data),
            "seed": args.seed,
            "version": __version__,
        })
        rows.append((variant, results))

    with open(os.path.join(args.out, "comparison.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("variant",) + tuple(REPORT_KEYS))
        for label, res in rows:
            w.writerow([label] + [repr(res.get(k, float("nan"))) for k in REPORT_KEYS])
    rows.sort(key=lambda r: -(r[1].get("urank") or 0.0))
    print(format_table(rows))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="pagen",
                                description="persona-aware variational response generator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="generate a synthetic persona corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--users", type=int, default=8)
    g.add_argument("--triples-per-user", type=int, default=400)
    g.add_argument("--strength", type=float, default=0.9)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gen_corpus)

    t = sub.add_parser("train", help="train one model variant")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--variant", default=None)
    t.set_defaults(fn=cmd_train)

    d = sub.add_parser("generate", help="decode replies from a checkpoint")
    d.add_argument("--model", required=True)
    d.add_argument("--vocab", default=None)
    d.add_argument("--users-file", default=None)
    d.add_argument("--user", default=C.UNSPECIFIED_USER_ID)
    d.add_argument("--query", default=None)
    d.add_argument("--input", default=None, help="batch mode: user TAB query per line")
    d.add_argument("--output", default=None)
    d.add_argument("--beam", type=int, default=10)
    d.add_argument("--max-length", type=int, default=30)
    d.add_argument("--mode", choices=("sample", "mean"), default="sample")
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(fn=cmd_generate)

    e = sub.add_parser("evaluate", help="run metrics for a checkpoint")
    e.add_argument("--model", required=True)
    e.add_argument("--ref-model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--train-data", required=True)
    e.add_argument("--vocab", default=None)
    e.add_argument("--users-file", default=None)
    e.add_argument("--vectors", default=None)
    e.add_argument("--metrics", default="urank,uppl,udistinct,bleu1")
    e.add_argument("--rounds", type=int, default=10)
    e.add_argument("--distractors", type=int, default=10)
    e.add_argument("--beam", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("selfcheck", help="gradient checks and metric oracles")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_selfcheck)

    r = sub.add_parser("report", help="format evaluation reports as a table")
    r.add_argument("runs", nargs="+")
    r.set_defaults(fn=cmd_report)

    c = sub.add_parser("compare", help="train and evaluate several variants")
    c.add_argument("--config", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--variants", required=True,
                   help="comma list, e.g. PAGENERATOR,CVAE,PAGENERATOR_NO_UE")
    c.add_argument("--reference", default="S2SA")
    c.add_argument("--rounds", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ContractError, ShapeError, C.CorpusError, ValueError) as e:
        print(f"error: {type(e).__module__}.{type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

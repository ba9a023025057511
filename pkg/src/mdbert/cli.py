"""Command-line entry point: ``mdbert <command> [options]``.

Settings resolve as command-line flag, then ``--config`` file, then built-in
default. Config files hold ``key = value`` lines with ``#`` comments; an
unknown key is a usage error.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__, bench, metrics, retrieval, synthetic, textprep, training
from . import numcore as nc
from ._accel import BACKEND
from .encoder import EncoderConfig
from .errors import DataError, EmptyGroupError, NumericError, ShapeError, UsageError
from .heads import top_attended
from .model import MDBert, ModelConfig

logger = logging.getLogger("mdbert")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _list(v):
    return [x.strip() for x in str(v).split(",") if x.strip()] if v not in (None, "") else []


# key -> (parser, default)
KNOWN_KEYS = {
    "train": (str, None),
    "dev": (str, None),
    "data": (str, None),
    "vocab": (str, None),
    "labels": (str, None),
    "out": (str, None),
    "checkpoint": (str, None),
    "seed": (int, 0),
    "fields": (_list, None),
    "strict": (_bool, True),
    "max_tokens_per_sentence": (int, 62),
    "max_sentences_per_doc": (int, 256),
    "hidden_dim": (int, 32),
    "num_heads": (int, 4),
    "token_layers": (int, 2),
    "sentence_layers": (int, 2),
    "ffn_dim": (int, 64),
    "dropout_rate": (float, 0.1),
    "sentence_positions": (_bool, True),
    "head": (str, "label_attention"),
    "head_input": (str, "post"),
    "lr": (float, 1e-5),
    "weight_decay": (float, 0.01),
    "frozen_epochs": (int, 3),
    "patience": (int, 3),
    "max_epochs": (int, 30),
    "sentence_budget": (int, 128),
    "w_doc": (float, 1.0),
    "w_desc": (float, 1.0),
    "augment": (_bool, True),
    "threshold": (float, 0.5),
}


def read_config(path):
    """Parse a ``key = value`` file; returns raw strings keyed by name."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not key:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            if key not in KNOWN_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = value.strip()
    return out


def resolve(args, keys):
    """Merge flags over the config file over defaults for ``keys``."""
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    cfg = {}
    for key in keys:
        parse, default = KNOWN_KEYS[key]
        flag = getattr(args, key, None)
        if flag is not None:
            raw = flag
        elif key in file_values:
            raw = file_values[key]
        else:
            cfg[key] = default
            continue
        try:
            cfg[key] = parse(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}") from None
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join(missing))


def _threads(default):
    raw = os.environ.get("MDB_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise UsageError(f"MDB_THREADS must be an integer, got {raw!r}") from None
    return default


def _load_corpus(path, cfg, vocab, label_vocab):
    limits = textprep.Limits(cfg["max_tokens_per_sentence"], cfg["max_sentences_per_doc"])
    docs, report = textprep.ingest(path, vocab, label_vocab, limits, cfg.get("fields"), cfg.get("strict", True))
    logger.info("%s: kept %d of %d records", path, report.kept, report.records)
    if not docs:
        raise DataError(f"{path}: no usable documents")
    return docs


def _load_vocabs(cfg):
    _require(cfg, "vocab", "labels")
    try:
        return textprep.Vocab.from_file(cfg["vocab"]), textprep.LabelVocab.from_file(cfg["labels"])
    except OSError as exc:
        raise DataError(f"{exc.filename}: {exc.strerror}") from None


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        nc.atomic_write(path, text)


# --- commands ---------------------------------------------------------------

TRAIN_KEYS = ["train", "dev", "vocab", "labels", "out", "seed", "fields", "strict", "max_tokens_per_sentence",
              "max_sentences_per_doc", "hidden_dim", "num_heads", "token_layers", "sentence_layers", "ffn_dim",
              "dropout_rate", "sentence_positions", "head", "head_input", "lr", "weight_decay", "frozen_epochs",
              "patience", "max_epochs", "sentence_budget", "w_doc", "w_desc", "augment"]


def cmd_train(args):
    cfg = resolve(args, TRAIN_KEYS)
    _require(cfg, "train", "dev", "out")
    vocab, label_vocab = _load_vocabs(cfg)
    train_docs = _load_corpus(cfg["train"], cfg, vocab, label_vocab)
    dev_docs = _load_corpus(cfg["dev"], cfg, vocab, label_vocab)
    try:
        enc_cfg = EncoderConfig(vocab_size=len(vocab), **{k: cfg[k] for k in EncoderConfig.field_names() if k in cfg
                                                         and k != "vocab_size"})
        model_cfg = ModelConfig(enc_cfg, len(label_vocab), cfg["head"], cfg["head_input"])
        schedule = training.TrainSchedule(cfg["frozen_epochs"], cfg["lr"], cfg["weight_decay"], cfg["sentence_budget"],
                                          cfg["patience"], cfg["max_epochs"], cfg["seed"], _threads(1))
        loss_cfg = training.LossConfig(cfg["w_doc"], cfg["w_desc"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    desc = []
    if cfg["augment"]:
        desc, _ = training.make_description_corpus(label_vocab, vocab, cfg["max_tokens_per_sentence"])
    model = MDBert.initialize(model_cfg, seed=cfg["seed"])
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    result = training.train(model, train_docs, dev_docs, desc, schedule, loss_cfg, out_dir=out,
                            log_path=os.path.join(out, "train_log.csv"))
    print(f"best_epoch={result.best_epoch} dev_micro_f1={result.best_score:.6f} epochs={result.epochs_run}")
    return EXIT_OK


def _predict(checkpoints, docs, threads, with_attention=False):
    probs, maps = [], None
    for path in checkpoints:
        model = MDBert.load(path)
        if with_attention and maps is None:
            p, maps = model.predict(docs, threads=threads, with_attention=True)
        else:
            p = model.predict(docs, threads=threads)
        probs.append(p)
    return training.average_predictions(probs), maps, model


def cmd_eval(args):
    cfg = resolve(args, ["data", "vocab", "labels", "out", "threshold", "fields", "strict",
                         "max_tokens_per_sentence", "max_sentences_per_doc"])
    _require(cfg, "data")
    checkpoints = args.checkpoint or []
    if not checkpoints:
        raise UsageError("eval needs at least one --checkpoint")
    vocab, label_vocab = _load_vocabs(cfg)
    docs = _load_corpus(cfg["data"], cfg, vocab, label_vocab)
    probs, maps, model = _predict(checkpoints, docs, _threads(os.cpu_count() or 1), args.explain)
    if model.config.num_labels != len(label_vocab):
        raise DataError(f"checkpoint predicts {model.config.num_labels} labels, label file has {len(label_vocab)}")
    labels = training.label_matrix(docs)
    report = metrics.evaluate(probs, labels, threshold=cfg["threshold"], single_label=args.single_label)
    prefix = cfg["out"]
    if prefix:
        nc.atomic_write(prefix + "_summary.csv", report.summary_csv())
        nc.atomic_write(prefix + "_per_class.csv", report.per_class_csv(label_vocab.names))
        pred = io.StringIO()
        w = csv.writer(pred, lineterminator="\n")
        w.writerow(["id"] + label_vocab.names)
        for d, row in zip(docs, probs):
            w.writerow([d.id] + [f"{v:.6f}" for v in row])
        nc.atomic_write(prefix + "_predictions.csv", pred.getvalue())
    else:
        sys.stdout.write(report.summary_csv())
    if args.explain:
        if maps is None:
            raise UsageError("--explain needs a label-attention checkpoint")
        k = args.explain_k
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["doc_id", "label", "probability"] + [c for i in range(1, k + 1) for c in (f"sent{i}", f"weight{i}")])
        for d, a, row in zip(docs, maps, probs):
            mask = np.ones(a.shape[1])
            for j in np.nonzero(row >= cfg["threshold"])[0]:
                top = top_attended(a[j], mask, k)
                cells = [c for i, wt in top for c in (i, f"{wt:.6f}")]
                w.writerow([d.id, label_vocab.names[j], f"{row[j]:.6f}"] + cells + [""] * (2 * k - len(cells)))
        _write(args.explain, buf.getvalue())
    return EXIT_OK


def cmd_embed(args):
    cfg = resolve(args, ["data", "vocab", "labels", "out", "checkpoint", "fields", "strict",
                         "max_tokens_per_sentence", "max_sentences_per_doc"])
    _require(cfg, "data", "checkpoint")
    vocab, label_vocab = _load_vocabs(cfg)
    docs = _load_corpus(cfg["data"], cfg, vocab, label_vocab)
    model = MDBert.load(cfg["checkpoint"])
    lines = []
    if args.level == "document":
        for d, v in zip(docs, model.embed(docs, "document")):
            lines.append({"id": d.id, "level": "document", "vector": v})
    else:
        for d, mat in zip(docs, model.embed(docs, "sentence")):
            lines.extend({"id": d.id, "level": "sentence", "index": i, "vector": v} for i, v in enumerate(mat))
    text = ""
    for rec in lines:
        rec["vector"] = [float(x) for x in np.asarray(rec["vector"], dtype=np.float32)]
        text += json.dumps(rec) + "\n"
    _write(cfg["out"], text)
    return EXIT_OK


def cmd_search(args):
    cfg = resolve(args, ["vocab", "checkpoint", "out", "max_tokens_per_sentence"])
    try:
        base = retrieval.SearchBase.from_csv(args.base)
        truth = retrieval.load_ground_truth(args.truth)
    except OSError as exc:
        raise DataError(f"{exc.filename}: {exc.strerror}") from None
    queries = [q for q, _ in truth]
    zero = [False] * len(queries)
    if args.engine == "bm25":
        index = retrieval.bm25_build(base)
        hits = []
        for i, q in enumerate(queries):
            best, score, zero[i] = retrieval.bm25_top1(index, q)
            hits.append((best, score))
    else:
        _require(cfg, "checkpoint", "vocab")
        model = MDBert.load(cfg["checkpoint"])
        vocab = textprep.Vocab.from_file(cfg["vocab"])
        hits = retrieval.embed_search(model, base, queries, vocab, cfg["max_tokens_per_sentence"])
    rep = retrieval.top1_auc(hits, truth, base)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query", "hit_id", "hit_name", "group_id", "score", "hit", "zero_score"])
    for q, (idx, score), ok, z in zip(queries, hits, rep.hits, zero):
        w.writerow([q, idx, base.names[idx], base.groups[idx], f"{score:.6f}", int(ok), int(z)])
    _write(cfg["out"], buf.getvalue())
    auc = "" if rep.auc is None else f"{rep.auc:.6f}"
    print(f"hit_rate={rep.hit_rate:.6f} auc={auc}", file=sys.stderr)
    return EXIT_OK


def cmd_bench(args):
    s_values = bench.grid_values(args.n) if args.grid else [args.s]
    reports = []
    for s in s_values:
        try:
            p = bench.ComplexityParams(args.n, args.d, s, args.depth, args.projections)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        reports.append(bench.measure(p, args.trials, args.heads) if args.trials > 0 else bench.flop_model(p))
    _write(args.out, bench.report_csv(reports))
    if len(reports) == 1 and not args.projections:
        r = reports[0]
        print(f"token term alone 1/s = {1 / r.params.s:.6f}; with sentence term {r.ratio:.6f} "
              f"(1/{1 / r.ratio:.3f})", file=sys.stderr)
    return EXIT_OK


def cmd_stats(args):
    cfg = resolve(args, ["data", "vocab", "labels", "out", "fields", "strict", "max_tokens_per_sentence",
                         "max_sentences_per_doc"])
    _require(cfg, "data")
    vocab, label_vocab = _load_vocabs(cfg)
    docs = _load_corpus(cfg["data"], cfg, vocab, label_vocab)
    _write(cfg["out"], textprep.stats_csv(textprep.stats(docs)))
    return EXIT_OK


def cmd_build_vocab(args):
    cfg = resolve(args, ["data", "out", "fields"])
    _require(cfg, "data", "out")
    try:
        vocab = textprep.build_vocab(textprep.corpus_texts(cfg["data"], cfg["fields"]), args.max_size)
    except OSError as exc:
        raise DataError(f"{exc.filename}: {exc.strerror}") from None
    nc.atomic_write(cfg["out"], vocab.to_text())
    print(f"{len(vocab)} tokens", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args):
    corpus = synthetic.make_corpus(n_docs=args.docs, n_labels=args.labels, vocab_size=args.vocab_size, seed=args.seed)
    synthetic.write_corpus(args.out, corpus)
    return EXIT_OK


# --- parser -------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    from .numcore import FORMAT_VERSION

    p = _Parser(prog="mdbert", description="Hierarchical multi-label document classifier.")
    p.add_argument("--version", action="version",
                   version=f"mdbert {__version__} (checkpoint format MDB1 v{FORMAT_VERSION}, kernels: {BACKEND})")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, *keys):
        sp.add_argument("--config", help="key = value settings file")
        for key in keys:
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None)

    t = sub.add_parser("train", help="train a model")
    common(t, *TRAIN_KEYS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a corpus and write metric tables")
    common(e, "data", "vocab", "labels", "out", "threshold", "fields", "strict", "max_tokens_per_sentence",
           "max_sentences_per_doc")
    e.add_argument("--checkpoint", action="append", help="repeat to average several models")
    e.add_argument("--explain", nargs="?", const="-", default=None,
                   help="write the most attended sentences per predicted label (CSV)")
    e.add_argument("--explain-k", type=int, default=3)
    e.add_argument("--single-label", action="store_true", help="also report accuracy")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("embed", help="export document or sentence embeddings as JSON lines")
    common(m, "data", "vocab", "labels", "out", "checkpoint", "fields", "strict", "max_tokens_per_sentence",
           "max_sentences_per_doc")
    m.add_argument("--level", choices=("document", "sentence"), default="document")
    m.set_defaults(func=cmd_embed)

    s = sub.add_parser("search", help="top-1 name standardization")
    common(s, "vocab", "checkpoint", "out", "max_tokens_per_sentence")
    s.add_argument("--engine", choices=("bm25", "embed"), default="bm25")
    s.add_argument("--base", required=True, help="CSV id,group_id,name")
    s.add_argument("--truth", required=True, help='JSON lines {"query": ..., "groups": [...]}')
    s.set_defaults(func=cmd_search)

    b = sub.add_parser("bench", help="attention cost model and timings")
    b.add_argument("--n", type=int, default=512)
    b.add_argument("--d", type=int, default=768)
    b.add_argument("--s", type=int, default=16)
    b.add_argument("--depth", type=int, default=1)
    b.add_argument("--trials", type=int, default=0, help="timed runs per stack; 0 reports the model only")
    b.add_argument("--heads", type=int, default=4)
    b.add_argument("--grid", action="store_true", help="scan s over powers of two up to n")
    b.add_argument("--projections", action="store_true", help="count the projection term too")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)

    st = sub.add_parser("stats", help="corpus statistics")
    common(st, "data", "vocab", "labels", "out", "fields", "strict", "max_tokens_per_sentence",
           "max_sentences_per_doc")
    st.set_defaults(func=cmd_stats)

    bv = sub.add_parser("build-vocab", help="build a subword vocabulary from a corpus")
    common(bv, "data", "out", "fields")
    bv.add_argument("--max-size", type=int, default=30000)
    bv.set_defaults(func=cmd_build_vocab)

    sy = sub.add_parser("synth", help="write the toy keyword corpus")
    sy.add_argument("--out", required=True)
    sy.add_argument("--docs", type=int, default=20)
    sy.add_argument("--labels", type=int, default=8)
    sy.add_argument("--vocab-size", type=int, default=50)
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mdbert: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"mdbert: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, EmptyGroupError) as exc:
        print(f"mdbert: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"mdbert: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

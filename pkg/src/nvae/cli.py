"""Command-line front end: ``nvae <subcommand> ...``.

Every subcommand computes all of its outputs in memory and writes them only
once everything succeeded, next to a ``manifest.json`` describing the run.
Failures exit non-zero with one ``error: ...`` line on stderr.
"""
import argparse
import datetime
import hashlib
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import atomic_write_bytes, encode_checkpoint, load_checkpoint
from .corpus import (
    Vocabulary,
    build_corpus,
    load_embeddings,
    preprocess,
    read_embedding_vocab,
    read_lines,
    read_stopwords,
    read_token_docs,
    write_embeddings,
    write_token_docs,
)
from .errors import InputError, NVAEError
from .gibbs import gibbs_run
from .metrics import cooc_counts, npmi_model, nmi, purity
from .model import DocBatch, export_topics, infer_theta
from .synth import synth_corpus
from .trainer import TrainConfig, train

log = logging.getLogger("nvae")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class Outputs:
    """Files staged in memory, written together by :meth:`commit`."""

    def __init__(self, directory, command, args, inputs):
        self.directory = directory
        self.files = {}
        self.manifest = {
            "command": command,
            "config": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
            "inputs": {p: _digest(p) for p in inputs if p},
            "seed": getattr(args, "seed", None),
            "version": __version__,
            "started": _now(),
        }

    def add(self, name, data):
        self.files[name] = data.encode("utf-8") if isinstance(data, str) else data

    def commit(self):
        os.makedirs(self.directory, exist_ok=True)
        self.manifest["finished"] = _now()
        self.manifest["outputs"] = sorted(self.files)
        for name, data in self.files.items():
            atomic_write_bytes(os.path.join(self.directory, name), data)
        atomic_write_bytes(os.path.join(self.directory, "manifest.json"),
                           (json.dumps(self.manifest, indent=2, default=str) + "\n").encode())


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _digest(path):
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    return h.hexdigest()


def _layers(text):
    try:
        sizes = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--layers expects comma-separated integers, got {text!r}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("--layers needs at least one positive size")
    return sizes


def _fmt_rows(rows):
    return "".join(" ".join(repr(float(x)) for x in row) + "\n" for row in rows)


def _fmt_lines(values):
    return "".join(f"{v}\n" for v in values)


def _load_training_corpus(args):
    token_docs = read_token_docs(args.corpus)
    labels = read_lines(args.labels) if getattr(args, "labels", None) else None
    if any(not d for d in token_docs):
        raise InputError(f"{args.corpus} contains an empty document; run `nvae prep` first")
    return build_corpus(token_docs, labels)


def _aligned_embeddings(path, vocab):
    emb, missing = load_embeddings(path, vocab)
    if missing:
        raise InputError(f"{len(missing)} vocabulary words lack embeddings in {path} "
                         f"(first: {missing[0]!r})")
    return emb.vectors


def cmd_prep(args):
    raw = read_lines(args.input)
    stop = read_stopwords(args.stopwords) if args.stopwords else set()
    emb_vocab = read_embedding_vocab(args.embeddings) if args.embeddings else None
    docs, kept = preprocess(raw, stop, args.min_count, emb_vocab)
    if not docs:
        raise InputError("every document is empty after preprocessing")
    out = Outputs(args.out, "prep", args, [args.input, args.stopwords, args.embeddings, args.labels])
    buf = io.StringIO()
    write_token_docs(docs, buf)
    out.add("corpus.txt", buf.getvalue())
    out.add("index_map.txt", _fmt_lines(kept))
    if args.labels:
        labels = read_lines(args.labels)
        if len(labels) < len(raw):
            raise InputError(f"{args.labels} has {len(labels)} lines for {len(raw)} documents")
        out.add("labels.txt", _fmt_lines(labels[i] for i in kept))
    out.commit()
    print(f"{len(docs)} documents kept of {len(raw)}")


def _config_from_args(args, **overrides):
    kw = dict(
        n_topics=args.topics, epochs=args.epochs, batch_size=args.batch_size,
        burn_in_epochs=args.burn_in_epochs, min_temperature=args.min_tau,
        layer_sizes=args.layers, learning_rate=args.learning_rate,
        train_embeddings=args.train_embeddings, seed=args.seed,
    )
    kw.update(overrides)
    return TrainConfig(**kw)


def cmd_train(args):
    corpus = _load_training_corpus(args)
    emb = _aligned_embeddings(args.embeddings, corpus.vocab)
    config = _config_from_args(args, bn_fc=not args.no_bn_fc, bn_beta=not args.no_bn_beta,
                               diagnostics=args.diagnostics)
    out = Outputs(args.out, "train", args, [args.corpus, args.embeddings, args.labels])
    buf = io.StringIO()
    res = train(corpus, emb, config, log=buf)
    sched = vars(res.schedule)
    out.add("checkpoint.nvae", encode_checkpoint(res.params, corpus.vocab.id_to_word, sched,
                                                 res.adam, config.to_dict()))
    out.add("metrics.jsonl", buf.getvalue())
    out.commit()
    last = res.history[-1]
    print(f"final loss {last['loss']:.6f} after {last['epoch']} epochs")


def _infer_corpus(path, vocab_words):
    vocab = Vocabulary(vocab_words)
    docs = []
    for d, toks in enumerate(read_token_docs(path)):
        toks = [t for t in toks if t in vocab]
        if not toks:
            raise InputError(f"document {d} of {path} has no word from the model's vocabulary")
        docs.append(toks)
    return build_corpus(docs, vocab=vocab)


def cmd_infer(args):
    ckpt = load_checkpoint(args.checkpoint, n_topics=args.topics)
    corpus = _infer_corpus(args.corpus, ckpt.vocab)
    tau = args.temperature if args.temperature is not None else ckpt.schedule.get("temperature", 0.7)
    props, clusters = infer_theta(ckpt.params, DocBatch(corpus.docs), tau)
    out = Outputs(args.out, "infer", args, [args.checkpoint, args.corpus])
    out.add("theta.txt", _fmt_rows(props))
    out.add("clusters.txt", _fmt_lines(clusters))
    out.commit()
    print(f"{len(clusters)} documents")


def cmd_topics(args):
    ckpt = load_checkpoint(args.checkpoint, n_topics=args.topics)
    topics = export_topics(ckpt.params, ckpt.vocab, args.top_n)
    out = Outputs(args.out, "topics", args, [args.checkpoint])
    out.add("topics.txt", "".join(" ".join(t) + "\n" for t in topics))
    out.commit()
    print(f"{len(topics)} topics")


def cmd_gibbs(args):
    corpus = _load_training_corpus(args)
    state, theta, phi = gibbs_run(corpus, args.topics, args.sweeps, args.alpha, args.beta,
                                  args.seed, args.average_last)
    words = corpus.vocab.id_to_word
    if args.top_n > len(words):
        raise InputError(f"--top-n {args.top_n} exceeds the vocabulary size {len(words)}")
    topics = [[words[i] for i in np.argsort(-row, kind="stable")[:args.top_n]] for row in phi]
    out = Outputs(args.out, "gibbs", args, [args.corpus, args.labels])
    out.add("theta.txt", _fmt_rows(theta))
    out.add("clusters.txt", _fmt_lines(np.argmax(theta, axis=1)))
    out.add("topics.txt", "".join(" ".join(t) + "\n" for t in topics))
    out.commit()
    print(f"{state.sweeps} sweeps")


def _read_ids(path):
    return [line.strip() for line in read_lines(path) if line.strip()]


def cmd_eval(args):
    if args.metric in ("nmi", "purity"):
        for flag in ("clusters", "labels"):
            if not getattr(args, flag):
                raise UsageError(f"--metric {args.metric} requires --{flag}")
        fn = nmi if args.metric == "nmi" else purity
        value = fn(_read_ids(args.clusters), _read_ids(args.labels))
        inputs = [args.clusters, args.labels]
    else:
        for flag in ("topics", "reference"):
            if not getattr(args, flag):
                raise UsageError(f"--metric npmi requires --{flag}")
        topics = [line.split()[:args.top_n] for line in read_lines(args.topics) if line.strip()]
        words = {w for t in topics for w in t}
        stats = cooc_counts(read_token_docs(args.reference), args.window, words)
        value = npmi_model(topics, stats)
        inputs = [args.topics, args.reference]
    if args.out:
        out = Outputs(args.out, "eval", args, inputs)
        out.add("metrics.txt", f"{args.metric}={value!r}\n")
        out.add("metrics.json", json.dumps({args.metric: value}) + "\n")
        out.commit()
    print(repr(float(value)))


def bn_ablation_summary(diagnostics, alpha):
    """Final-epoch beta-gradient spread, alpha spread and median FC-gradient
    norm of one diagnostics run."""
    last_epoch = max(r["epoch"] for r in diagnostics)
    last = np.array([r["beta_grad_norms"] for r in diagnostics if r["epoch"] == last_epoch])
    per_topic = last.mean(axis=0)
    lo = per_topic.min()
    alpha = np.asarray(alpha)
    return {
        "beta_grad_ratio": float(per_topic.max() / lo) if lo > 0 else float("inf"),
        "alpha_cv": float(alpha.std() / alpha.mean()),
        "fc_grad_median": float(np.median([r["fc_grad_norm"] for r in diagnostics])),
        "alpha": [float(a) for a in alpha],
    }


def cmd_diag(args):
    corpus = _load_training_corpus(args)
    emb = _aligned_embeddings(args.embeddings, corpus.vocab)
    out = Outputs(args.out, "diag", args, [args.corpus, args.embeddings])
    summary = {}
    for bn_fc in (True, False):
        for bn_beta in (True, False):
            name = f"bnfc{int(bn_fc)}_bnbeta{int(bn_beta)}"
            config = _config_from_args(args, bn_fc=bn_fc, bn_beta=bn_beta, diagnostics=True)
            buf = io.StringIO()
            res = train(corpus, emb, config, log=buf)
            out.add(f"{name}.jsonl", buf.getvalue())
            summary[name] = bn_ablation_summary(res.diagnostics, res.params.alpha)
            log.info("%s: %s", name, summary[name])
    out.add("summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    out.commit()
    for name, s in summary.items():
        print(f"{name} beta_grad_ratio={s['beta_grad_ratio']:.4g} alpha_cv={s['alpha_cv']:.4g} "
              f"fc_grad_median={s['fc_grad_median']:.4g}")


def cmd_synth(args):
    sc = synth_corpus(args.topics, args.docs_per_topic, args.doc_length, args.vocab_per_topic,
                      args.dim, args.separation, args.seed)
    out = Outputs(args.out, "synth", args, [])
    buf = io.StringIO()
    write_token_docs(sc.token_docs, buf)
    out.add("corpus.txt", buf.getvalue())
    out.add("labels.txt", _fmt_lines(sc.labels))
    buf = io.StringIO()
    write_embeddings(sc.words, sc.embeddings, buf)
    out.add("embeddings.txt", buf.getvalue())
    out.commit()
    print(f"{len(sc.token_docs)} documents, {len(sc.words)} words")


def _add_train_flags(p, epochs=128, batch_size=256, burn_in=64, topics=None):
    p.add_argument("--corpus", required=True, help="one preprocessed document per line")
    p.add_argument("--embeddings", required=True, help="text embedding file")
    p.add_argument("--labels", help="one label per corpus line (stored only)")
    p.add_argument("--topics", type=int, required=topics is None, default=topics)
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=batch_size)
    p.add_argument("--burn-in-epochs", type=int, default=burn_in)
    p.add_argument("--min-tau", type=float, default=0.7)
    p.add_argument("--layers", type=_layers, default=(128, 128))
    p.add_argument("--learning-rate", type=float, default=8e-3)
    p.add_argument("--train-embeddings", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = _Parser(prog="nvae", description="Nested VAE topic modeling toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prep", help="clean raw text into a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--labels")
    p.add_argument("--stopwords")
    p.add_argument("--embeddings", help="drop words absent from this embedding file")
    p.add_argument("--min-count", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="train the nested VAE")
    _add_train_flags(p)
    p.add_argument("--no-bn-fc", action="store_true")
    p.add_argument("--no-bn-beta", action="store_true")
    p.add_argument("--diagnostics", action="store_true", help="log per-step diagnostics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gibbs", help="collapsed Gibbs LDA baseline")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels")
    p.add_argument("--topics", type=int, required=True)
    p.add_argument("--sweeps", type=int, default=1500)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--average-last", type=int, default=0)
    p.add_argument("--top-n", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gibbs)

    p = sub.add_parser("infer", help="topic proportions and clusters from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--topics", type=int, help="expected number of topics")
    p.add_argument("--temperature", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("topics", help="top words per topic from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--topics", type=int, help="expected number of topics")
    p.add_argument("--top-n", type=int, default=15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("eval", help="nmi / purity / npmi")
    p.add_argument("--metric", choices=("nmi", "purity", "npmi"), required=True)
    p.add_argument("--clusters")
    p.add_argument("--labels")
    p.add_argument("--topics", help="topics file, one ranked word list per line")
    p.add_argument("--reference", help="reference corpus for co-occurrence counts")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--top-n", type=int, default=15)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diag", help="batch-norm ablation: four runs with diagnostics")
    _add_train_flags(p, epochs=64, batch_size=128, burn_in=32, topics=6)
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("synth", help="planted-topic corpus generator")
    p.add_argument("--topics", type=int, default=3)
    p.add_argument("--docs-per-topic", type=int, default=200)
    p.add_argument("--doc-length", type=int, default=12)
    p.add_argument("--vocab-per-topic", type=int, default=100)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--separation", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("NVAE_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except NVAEError as exc:
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

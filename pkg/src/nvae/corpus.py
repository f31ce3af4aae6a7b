"""Text ingestion: preprocessing, vocabulary, bag-of-words and embeddings."""
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParseError


class Vocabulary:
    def __init__(self, words=()):
        self.id_to_word = []
        self.word_to_id = {}
        for w in words:
            self.add(w)

    def add(self, word):
        idx = self.word_to_id.get(word)
        if idx is None:
            idx = len(self.id_to_word)
            self.word_to_id[word] = idx
            self.id_to_word.append(word)
        return idx

    def __len__(self):
        return len(self.id_to_word)

    def __contains__(self, word):
        return word in self.word_to_id

    def __getitem__(self, idx):
        return self.id_to_word[idx]

    def __iter__(self):
        return iter(self.id_to_word)


@dataclass
class Corpus:
    docs: list                       # (word ids, counts) pairs of int arrays
    vocab: Vocabulary
    labels: np.ndarray = None        # per-document label ids, or None
    label_names: list = field(default_factory=list)
    kept_index: list = None          # original line number of each document

    def __len__(self):
        return len(self.docs)

    @property
    def n_tokens(self):
        return int(sum(c.sum() for _, c in self.docs))

    def subset(self, indices):
        labels = None if self.labels is None else self.labels[list(indices)]
        kept = None if self.kept_index is None else [self.kept_index[i] for i in indices]
        return Corpus([self.docs[i] for i in indices], self.vocab, labels,
                      list(self.label_names), kept)


def tokenize(line):
    return line.lower().split()


def preprocess(raw_docs, stopwords=(), min_count=3, embedding_vocab=None):
    """Clean raw text lines.

    Lowercases and whitespace-splits each line, drops stopwords, words
    missing from ``embedding_vocab`` (when given) and words whose corpus
    frequency after those filters is below ``min_count``; then drops
    documents left empty. Returns ``(token_docs, kept_index)`` where
    ``kept_index[j]`` is the input line number of output document ``j``.
    """
    stop = {w.lower() for w in stopwords}
    docs = []
    for line in raw_docs:
        toks = [t for t in tokenize(line) if t not in stop]
        if embedding_vocab is not None:
            toks = [t for t in toks if t in embedding_vocab]
        docs.append(toks)
    freq = Counter(t for doc in docs for t in doc)
    out, kept = [], []
    for i, doc in enumerate(docs):
        doc = [t for t in doc if freq[t] >= min_count]
        if doc:
            out.append(doc)
            kept.append(i)
    return out, kept


def build_corpus(token_docs, labels=None, vocab=None, kept_index=None):
    """Bag-of-words corpus; vocabulary ids follow first occurrence.

    ``labels`` are arbitrary hashable values aligned with ``token_docs``;
    they are mapped to dense ids in first-occurrence order. With a fixed
    ``vocab`` unknown tokens raise :class:`InputError`.
    """
    token_docs = list(token_docs)
    if not token_docs:
        raise InputError("no documents")
    if labels is not None and len(labels) != len(token_docs):
        raise InputError(f"{len(labels)} labels for {len(token_docs)} documents")
    grow = vocab is None
    vocab = Vocabulary() if vocab is None else vocab
    docs = []
    for d, toks in enumerate(token_docs):
        if not toks:
            raise InputError(f"document {d} is empty")
        counts = Counter()
        order = []
        for t in toks:
            if t not in vocab:
                if not grow:
                    raise InputError(f"document {d}: word {t!r} not in vocabulary")
                vocab.add(t)
            i = vocab.word_to_id[t]
            if i not in counts:
                order.append(i)
            counts[i] += 1
        ids = np.array(order, dtype=np.int64)
        docs.append((ids, np.array([counts[i] for i in order], dtype=np.int64)))
    label_ids, names = None, []
    if labels is not None:
        lookup = {}
        for lab in labels:
            if lab not in lookup:
                lookup[lab] = len(names)
                names.append(lab)
        label_ids = np.array([lookup[lab] for lab in labels], dtype=np.int64)
    return Corpus(docs, vocab, label_ids, names, kept_index)


def read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def read_stopwords(path):
    return {w.strip().lower() for w in read_lines(path) if w.strip()}


def read_token_docs(path):
    return [tokenize(line) for line in read_lines(path)]


def write_token_docs(token_docs, fh):
    for doc in token_docs:
        fh.write(" ".join(doc) + "\n")


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray

    @property
    def dim(self):
        return self.vectors.shape[1]


def _embedding_lines(path):
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            # word2vec-style "count dim" header
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            yield lineno, parts


def read_embedding_vocab(path):
    """The set of words listed in a text embedding file."""
    return {parts[0] for _, parts in _embedding_lines(path)}


def load_embeddings(path, vocab):
    """Rows of a text embedding file aligned to ``vocab`` ids.

    Returns ``(EmbeddingMatrix, missing)``; ``missing`` lists vocabulary words
    absent from the file (their rows are zero). Every line must carry the
    same number of values; the first occurrence of a word wins.
    """
    dim = None
    rows = {}
    for lineno, parts in _embedding_lines(path):
        word, values = parts[0], parts[1:]
        if dim is None:
            dim = len(values)
            if dim == 0:
                raise ParseError("embedding line has no values", lineno, path)
        elif len(values) != dim:
            raise ParseError(f"expected {dim} values, found {len(values)}", lineno, path)
        if word in vocab and word not in rows:
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise ParseError(f"malformed number: {exc}", lineno, path) from exc
            if not np.all(np.isfinite(vec)):
                raise ParseError("non-finite value", lineno, path)
            rows[word] = vec
    if dim is None:
        raise ParseError("embedding file is empty", None, path)
    out = np.zeros((len(vocab), dim))
    missing = []
    for i, w in enumerate(vocab.id_to_word):
        if w in rows:
            out[i] = rows[w]
        else:
            missing.append(w)
    return EmbeddingMatrix(out), missing


def write_embeddings(words, vectors, fh):
    for w, v in zip(words, vectors):
        fh.write(w + " " + " ".join(repr(float(x)) for x in v) + "\n")

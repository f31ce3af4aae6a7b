"""Shared builders for the test suite."""
import functools

import numpy as np

from nvae.corpus import Vocabulary, build_corpus
from nvae.model import DocBatch, init_params
from nvae.synth import synth_corpus


def random_docs(rng, n_docs, vocab_size, max_distinct=6, max_count=3):
    docs = []
    for _ in range(n_docs):
        n = int(rng.integers(1, max_distinct + 1))
        ids = rng.choice(vocab_size, size=n, replace=False)
        docs.append((ids.astype(np.int64), rng.integers(1, max_count + 1, size=n).astype(np.int64)))
    return docs


def tiny_model(K=4, V=50, D=8, n_docs=5, layers=(16, 16), seed=0, **kw):
    """Small random model and batch (the gradient-check scale)."""
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(V, D))
    params = init_params(emb, K, layers, seed=seed, **kw)
    batch = DocBatch(random_docs(rng, n_docs, V))
    return params, batch


def aligned_embeddings(sc, corpus):
    index = {w: i for i, w in enumerate(sc.words)}
    return sc.embeddings[[index[w] for w in corpus.vocab.id_to_word]]


@functools.lru_cache(maxsize=None)
def planted_corpus(n_topics=3, docs_per_topic=200, doc_length=12, vocab_per_topic=100,
                   embed_dim=10, separation=5.0, seed=7):
    sc = synth_corpus(n_topics, docs_per_topic, doc_length, vocab_per_topic, embed_dim,
                      separation, seed)
    corpus = build_corpus(sc.token_docs, sc.labels)
    return corpus, aligned_embeddings(sc, corpus)


@functools.lru_cache(maxsize=None)
def short_text_corpus():
    """1794 documents over 6377 word types, mean length 13.6 (20 planted
    topics, 300-dimensional embeddings)."""
    sc = synth_corpus(20, 90, 14, 319, 300, 5.0, seed=3)
    rng = np.random.default_rng(0)
    words = sc.words[:6377]
    keep = set(words)
    docs = []
    for d in sc.token_docs[:1794]:
        length = 14 if rng.random() < 0.6 else 13
        docs.append([w for w in d[:length] if w in keep] or [words[0]])
    corpus = build_corpus(docs, vocab=Vocabulary(words))
    return corpus, sc.embeddings[:6377]

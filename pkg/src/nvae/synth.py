"""Planted-topic corpora with clustered word embeddings."""
from dataclasses import dataclass

import numpy as np

from .errors import InputError


@dataclass
class SynthCorpus:
    token_docs: list
    labels: list
    words: list
    embeddings: np.ndarray
    theta: np.ndarray


def synth_corpus(n_topics=3, docs_per_topic=200, doc_length=12, vocab_per_topic=100,
                 embed_dim=10, separation=5.0, seed=7, doc_prior=0.1, word_prior=1.0):
    """Sample a corpus from the LDA generative process.

    Each topic owns ``vocab_per_topic`` words (disjoint across topics) with a
    Dirichlet(``word_prior``) word distribution. Word vectors are drawn from
    unit-variance Gaussians centred on the topic's center; centers sit
    ``separation`` apart pairwise (when ``n_topics <= embed_dim``) and have
    zero mean. A document labelled ``k`` gets
    Dirichlet(``doc_prior``) proportions whose largest entry is moved to
    topic ``k``.
    """
    K, V_t, D = int(n_topics), int(vocab_per_topic), int(embed_dim)
    if min(K, docs_per_topic, doc_length, V_t, D) < 1:
        raise InputError("all counts must be at least 1")
    if separation < 0:
        raise InputError("separation must be non-negative")
    rng = np.random.default_rng(seed)

    if K <= D:
        centers = np.eye(K, D) * (separation / np.sqrt(2.0))
    else:
        dirs = rng.normal(size=(K, D))
        centers = dirs / np.linalg.norm(dirs, axis=1, keepdims=True) * (separation / np.sqrt(2.0))
    centers = centers - centers.mean(axis=0)
    words = [f"t{k}w{j}" for k in range(K) for j in range(V_t)]
    topic_of = np.repeat(np.arange(K), V_t)
    emb = centers[topic_of] + rng.normal(size=(K * V_t, D))
    phi = rng.dirichlet(np.full(V_t, word_prior), size=K)

    docs, labels, thetas = [], [], []
    for k in range(K):
        for _ in range(docs_per_topic):
            theta = rng.dirichlet(np.full(K, doc_prior))
            top = int(np.argmax(theta))
            theta[[top, k]] = theta[[k, top]]
            z = rng.choice(K, size=doc_length, p=theta)
            toks = [words[t * V_t + rng.choice(V_t, p=phi[t])] for t in z]
            docs.append(toks)
            labels.append(k)
            thetas.append(theta)
    return SynthCorpus(docs, labels, words, emb, np.array(thetas))

"""Collapsed Gibbs sampling for plain LDA (the baseline model).

Token updates run in a numba kernel. Each sweep consumes one uniform per
token from its own noise stream, so a run is fully determined by the seed.
"""
from dataclasses import dataclass

import numba
import numpy as np

from .distributions import BaseNoise
from .errors import InputError


@dataclass
class GibbsState:
    doc: np.ndarray       # per-token document index
    word: np.ndarray      # per-token word id
    z: np.ndarray         # per-token topic
    n_dk: np.ndarray      # D x K
    n_kw: np.ndarray      # K x V
    n_k: np.ndarray       # K
    alpha: float
    beta_prior: float
    sweeps: int = 0

    @property
    def n_topics(self):
        return self.n_k.shape[0]

    @property
    def vocab_size(self):
        return self.n_kw.shape[1]


def corpus_tokens(corpus):
    """Flatten a corpus into per-token (doc, word) arrays in document order."""
    doc, word = [], []
    for d, (ids, cnts) in enumerate(corpus.docs):
        rep = np.repeat(np.asarray(ids, dtype=np.int64), np.asarray(cnts, dtype=np.int64))
        word.append(rep)
        doc.append(np.full(rep.size, d, dtype=np.int64))
    return np.concatenate(doc), np.concatenate(word)


def recount(doc, word, z, n_docs, n_topics, vocab_size):
    n_dk = np.zeros((n_docs, n_topics), dtype=np.int64)
    n_kw = np.zeros((n_topics, vocab_size), dtype=np.int64)
    np.add.at(n_dk, (doc, z), 1)
    np.add.at(n_kw, (z, word), 1)
    return n_dk, n_kw, n_kw.sum(axis=1)


def gibbs_init(corpus, n_topics, alpha=0.1, beta_prior=0.01, seed=0):
    if n_topics < 1:
        raise InputError("n_topics must be at least 1")
    if alpha <= 0 or beta_prior <= 0:
        raise InputError("priors must be positive")
    doc, word = corpus_tokens(corpus)
    rng = BaseNoise(seed, (0, 0, 2)).generator()
    z = rng.integers(0, n_topics, size=doc.size).astype(np.int64)
    n_dk, n_kw, n_k = recount(doc, word, z, len(corpus), n_topics, len(corpus.vocab))
    return GibbsState(doc, word, z, n_dk, n_kw, n_k, float(alpha), float(beta_prior))


def conditional(state, token):
    """p(z_token = k | all other assignments), normalized."""
    d, w, k_old = state.doc[token], state.word[token], state.z[token]
    n_dk = state.n_dk[d].astype(np.float64)
    n_kw = state.n_kw[:, w].astype(np.float64)
    n_k = state.n_k.astype(np.float64)
    n_dk[k_old] -= 1
    n_kw[k_old] -= 1
    n_k[k_old] -= 1
    V = state.vocab_size
    p = (n_dk + state.alpha) * (n_kw + state.beta_prior) / (n_k + V * state.beta_prior)
    return p / p.sum()


@numba.njit(cache=True)
def _sweep(doc, word, z, n_dk, n_kw, n_k, alpha, beta, u):
    K = n_k.shape[0]
    V = n_kw.shape[1]
    vbeta = V * beta
    p = np.empty(K)
    for i in range(doc.shape[0]):
        d = doc[i]
        w = word[i]
        k = z[i]
        n_dk[d, k] -= 1
        n_kw[k, w] -= 1
        n_k[k] -= 1
        total = 0.0
        for t in range(K):
            total += (n_dk[d, t] + alpha) * (n_kw[t, w] + beta) / (n_k[t] + vbeta)
            p[t] = total
        target = u[i] * total
        k = K - 1
        for t in range(K):
            if target < p[t]:
                k = t
                break
        z[i] = k
        n_dk[d, k] += 1
        n_kw[k, w] += 1
        n_k[k] += 1


def gibbs_sweep(state, noise):
    """Resample every token once, in document order (in place)."""
    u = noise.generator().random(state.z.size)
    _sweep(state.doc, state.word, state.z, state.n_dk, state.n_kw, state.n_k,
           state.alpha, state.beta_prior, u)
    state.sweeps += 1
    return state


def gibbs_estimate(state):
    """Posterior-mean ``(theta_hat, phi_hat)`` from the current counts."""
    K, V = state.n_topics, state.vocab_size
    n_d = state.n_dk.sum(axis=1, keepdims=True)
    theta = (state.n_dk + state.alpha) / (n_d + K * state.alpha)
    phi = (state.n_kw + state.beta_prior) / (state.n_k[:, None] + V * state.beta_prior)
    return theta, phi


def gibbs_run(corpus, n_topics, sweeps=1500, alpha=0.1, beta_prior=0.01, seed=0,
              average_last=0):
    """Initialize, sweep, and estimate.

    With ``average_last > 0`` the estimates of the last that many sweeps are
    averaged; otherwise the final state alone is used. Returns
    ``(state, theta_hat, phi_hat)``.
    """
    state = gibbs_init(corpus, n_topics, alpha, beta_prior, seed)
    theta_acc = phi_acc = None
    for s in range(1, sweeps + 1):
        gibbs_sweep(state, BaseNoise(seed, (s, 0, 3)))
        if average_last and s > sweeps - average_last:
            th, ph = gibbs_estimate(state)
            theta_acc = th if theta_acc is None else theta_acc + th
            phi_acc = ph if phi_acc is None else phi_acc + ph
    if theta_acc is not None:
        n = min(average_last, sweeps)
        return state, theta_acc / n, phi_acc / n
    theta, phi = gibbs_estimate(state)
    return state, theta, phi

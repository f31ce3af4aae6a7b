"""Clustering agreement (purity, NMI) and NPMI topic coherence."""
import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import InputError


def _dense_ids(values):
    _, inv = np.unique(np.asarray(list(values), dtype=object).astype(str), return_inverse=True)
    return inv


def contingency(clusters, labels):
    clusters = list(clusters)
    labels = list(labels)
    if len(clusters) != len(labels):
        raise InputError(f"{len(clusters)} cluster ids for {len(labels)} labels")
    if not clusters:
        raise InputError("empty clustering")
    c = _dense_ids(clusters)
    l = _dense_ids(labels)
    table = np.zeros((c.max() + 1, l.max() + 1), dtype=np.int64)
    np.add.at(table, (c, l), 1)
    return table


def purity(clusters, labels):
    table = contingency(clusters, labels)
    return float(table.max(axis=1).sum() / table.sum())


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(clusters, labels):
    """I(C; L) / ((H(C) + H(L)) / 2), natural logarithms.

    Two single-block partitions are identical and score 1; a single block
    against anything else scores 0.
    """
    table = contingency(clusters, labels)
    n = table.sum()
    hc = _entropy(table.sum(axis=1), n)
    hl = _entropy(table.sum(axis=0), n)
    if hc == 0.0 and hl == 0.0:
        return 1.0
    if hc == 0.0 or hl == 0.0:
        return 0.0
    pc = table.sum(axis=1) / n
    pl = table.sum(axis=0) / n
    nz = table > 0
    pj = table[nz] / n
    mi = float((pj * np.log(pj / np.outer(pc, pl)[nz])).sum())
    return max(0.0, min(1.0, mi / ((hc + hl) / 2.0)))


@dataclass
class CoocStats:
    window_count: int = 0
    single: Counter = field(default_factory=Counter)
    pair: Counter = field(default_factory=Counter)

    def joint(self, a, b):
        if a == b:
            return self.single[a]
        return self.pair[(a, b) if a < b else (b, a)]


def document_windows(tokens, window):
    """Boolean (set) windows sliding one token at a time; a document no
    longer than the window is one window."""
    if len(tokens) <= window:
        return [set(tokens)] if tokens else []
    return [set(tokens[i:i + window]) for i in range(len(tokens) - window + 1)]


def cooc_counts(reference, window=10, words=None):
    """Window occurrence statistics over a tokenized reference corpus.

    Windows never cross document boundaries. With ``words`` given, only
    those words are tracked (the window count is unaffected).
    """
    if window < 2:
        raise InputError("window must be at least 2")
    reference = list(reference)
    if not reference:
        raise InputError("empty reference corpus")
    keep = None if words is None else set(words)
    stats = CoocStats()
    for doc in reference:
        for win in document_windows(list(doc), window):
            stats.window_count += 1
            if keep is not None:
                win = win & keep
            ws = sorted(win)
            stats.single.update(ws)
            stats.pair.update(combinations(ws, 2))
    return stats


def npmi_pair(a, b, stats):
    n = stats.window_count
    joint = stats.joint(a, b)
    if joint == 0:
        return -1.0
    pij = joint / n
    if pij == 1.0:
        return 1.0
    pi = stats.single[a] / n
    pj = stats.single[b] / n
    return math.log(pij / (pi * pj)) / -math.log(pij)


def npmi_topic(top_words, stats):
    """Mean NPMI over all unordered pairs of the topic's words that occur in
    the reference statistics."""
    present = [w for w in top_words if stats.single[w] > 0]
    scores = [npmi_pair(a, b, stats) for a, b in combinations(present, 2)]
    if not scores:
        raise InputError("no word pair of the topic occurs in the reference corpus")
    return float(np.mean(scores))


def npmi_model(topics, stats):
    """Mean per-topic NPMI."""
    return float(np.mean([npmi_topic(t, stats) for t in topics]))


def cluster_assignments(proportions):
    """Argmax topic per document; ties go to the lowest topic index."""
    return np.argmax(np.asarray(proportions), axis=1)

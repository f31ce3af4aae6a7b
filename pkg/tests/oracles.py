"""Slow, literal implementations of the clustering and coherence metrics."""
import itertools
import math


def purity(clusters, labels):
    total = 0
    for c in set(clusters):
        members = [lab for cl, lab in zip(clusters, labels) if cl == c]
        total += max(members.count(lab) for lab in set(members))
    return total / len(labels)


def nmi(clusters, labels):
    n = len(labels)
    pc = {c: clusters.count(c) / n for c in set(clusters)}
    pl = {l: labels.count(l) / n for l in set(labels)}
    hc = -sum(p * math.log(p) for p in pc.values())
    hl = -sum(p * math.log(p) for p in pl.values())
    if hc == 0 and hl == 0:
        return 1.0
    if hc == 0 or hl == 0:
        return 0.0
    mi = 0.0
    for c in pc:
        for l in pl:
            joint = sum(1 for a, b in zip(clusters, labels) if a == c and b == l) / n
            if joint > 0:
                mi += joint * math.log(joint / (pc[c] * pl[l]))
    return mi / ((hc + hl) / 2)


def windows(doc, size):
    if len(doc) <= size:
        return [set(doc)]
    return [set(doc[i:i + size]) for i in range(len(doc) - size + 1)]


def cooc(reference, size):
    wins = [w for doc in reference if doc for w in windows(doc, size)]
    vocab = sorted({t for doc in reference for t in doc})
    single = {v: sum(v in w for w in wins) for v in vocab}
    pair = {(a, b): sum(a in w and b in w for w in wins)
            for a, b in itertools.combinations(vocab, 2)}
    return len(wins), single, pair


def npmi_topic(words, reference, size):
    n, single, pair = cooc(reference, size)
    present = [w for w in words if single.get(w, 0) > 0]
    scores = []
    for a, b in itertools.combinations(present, 2):
        joint = single[a] if a == b else pair[(min(a, b), max(a, b))]
        if joint == 0:
            scores.append(-1.0)
            continue
        pij = joint / n
        if pij == 1.0:
            scores.append(1.0)
            continue
        scores.append(math.log(pij / (single[a] / n * single[b] / n)) / -math.log(pij))
    return sum(scores) / len(scores)

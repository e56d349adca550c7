"""Independent brute-force re-implementations used as test oracles."""

import numpy as np


def rank_oracle(scores, target, known, n):
    cands = [e for e in range(n) if e == target or e not in set(known)]
    cands.sort(key=lambda e: (-scores[e], e))
    return cands.index(target) + 1


def metrics_oracle(ranks):
    out = {"hits1": 0.0, "hits3": 0.0, "hits10": 0.0, "mrr": 0.0}
    for r in ranks:
        out["hits1"] += r <= 1
        out["hits3"] += r <= 3
        out["hits10"] += r <= 10
        out["mrr"] += 1.0 / r
    return {k: v / len(ranks) for k, v in out.items()}


def ap_oracle(pos, neg):
    # worst-case order at ties: every tied negative goes first
    items = sorted([(s, 1) for s in pos] + [(s, 0) for s in neg], key=lambda x: (-x[0], x[1]))
    labels = np.array([lab for _, lab in items])
    if labels.sum() == 0:
        return 0.0
    precisions = [labels[:k + 1].mean() for k in range(len(labels)) if labels[k] == 1]
    return float(np.mean(precisions))

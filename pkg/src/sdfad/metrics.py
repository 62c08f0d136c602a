"""Ranking metrics for anomaly scores.

``auroc`` is the Mann-Whitney statistic with half credit for ties.  ``aupr``
is the step-curve average precision: thresholds are the distinct scores in
descending order and tied scores enter together.  Each has a slow
reference twin (``*_oracle``) used by the tests.
"""

import numpy as np
from scipy.stats import rankdata

from .errors import NoPositives, SingleClass


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores vs {len(y)} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(np.int64)


def auroc(scores, labels):
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both normal and anomalous samples")
    ranks = rankdata(s)  # midranks for ties
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_oracle(scores, labels):
    """All-pairs count: wins plus half the ties over ``n_pos * n_neg``."""
    s, y = _check(scores, labels)
    pos, neg = s[y == 1], s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("AUROC needs both normal and anomalous samples")
    wins = ties = 0
    for p in pos.tolist():
        for n in neg.tolist():
            if p > n:
                wins += 1
            elif p == n:
                ties += 1
    return float((wins + 0.5 * ties) / (len(pos) * len(neg)))


def aupr(scores, labels):
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("AUPR needs at least one anomalous sample")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each group of tied scores
    ends = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(y)[ends]
    predicted = ends + 1
    precision = tp / predicted
    recall = tp / n_pos
    return float(np.sum(np.diff(recall, prepend=0.0) * precision))


def aupr_oracle(scores, labels):
    """Enumerate every distinct threshold and count directly."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("AUPR needs at least one anomalous sample")
    total = 0.0
    prev_recall = 0.0
    for t in sorted(set(s.tolist()), reverse=True):
        flagged = s >= t
        tp = int((flagged & (y == 1)).sum())
        recall = tp / n_pos
        precision = tp / int(flagged.sum())
        total += (recall - prev_recall) * precision
        prev_recall = recall
    return total

"""Token-level average precision."""

from __future__ import annotations

import numpy as np


def average_precision(scores, labels) -> float:
    """Step-wise AP: sum over distinct score thresholds of (R_k - R_{k-1}) * P_k.

    Tied scores form one threshold, so a constant predictor scores exactly
    the positive prevalence.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if scores.size == 0:
        raise ValueError("average_precision of an empty set")
    n_pos = labels.sum()
    if n_pos == 0:
        return 0.0
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of each run of tied scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp_at = tp[ends]
    precision = tp_at / (ends + 1)
    recall = tp_at / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))

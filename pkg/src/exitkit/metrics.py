"""Offline ranking metrics: rank-sum AUC and Logloss."""

from __future__ import annotations

import numpy as np

from .errors import MetricUndefinedError

SCORE_EPS = 1e-7


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the group-average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    ranks[order] = np.arange(1, scores.size + 1, dtype=np.float64)
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=ranks)
    return (sums / counts)[inverse]


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties 0.5.

    Computed by rank-sum over average ranks, equivalent to pair counting.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("auc expects matching 1-d scores and labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("auc undefined without both positive and negative labels")
    ranks = _average_ranks(s)
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def logloss(scores, labels) -> float:
    """Mean binary cross-entropy with scores clipped to [1e-7, 1-1e-7]."""
    s = np.clip(np.asarray(scores, dtype=np.float64), SCORE_EPS, 1.0 - SCORE_EPS)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("logloss expects matching 1-d scores and labels")
    return float(np.mean(-(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))))

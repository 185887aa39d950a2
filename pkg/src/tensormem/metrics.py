"""Held-out evaluation metrics."""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .stores import BERNOULLI, nll_and_dtheta


def _average_ranks(x):
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    xs = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_score(labels, scores):
    """Area under the ROC curve via the rank-sum formula (ties averaged)."""
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    if labels.shape != scores.shape:
        raise DataError("labels and scores must have equal length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both positive and negative examples")
    ranks = _average_ranks(scores)
    return float((ranks[labels].sum() - 0.5 * n_pos * (n_pos + 1)) / (n_pos * n_neg))


def mean_nll(values, thetas, likelihood=BERNOULLI, sigma2=1.0):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DataError("mean NLL of an empty set")
    nll, _ = nll_and_dtheta(values, thetas, likelihood, sigma2)
    return float(nll.mean())

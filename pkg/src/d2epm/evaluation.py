"""Held-out link scoring and AUROC."""
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .model import link_probabilities

__all__ = ["ScoredEntry", "predict_heldout", "auroc", "auroc_score"]


@dataclass(frozen=True)
class ScoredEntry:
    t: int
    i: int
    j: int
    score: float
    label: int


def auroc_score(scores, labels):
    """Mann-Whitney AUROC with midranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc(entries):
    return auroc_score([e.score for e in entries], [e.label for e in entries])


def predict_heldout(summaries, mask):
    """Score every held-out cell by its posterior-averaged link probability.

    Uses the averaged per-sample probabilities when the summaries carry them
    for this mask, otherwise averages over ``summaries.samples``, otherwise
    falls back to the point estimate in ``summaries.state``.
    """
    if len(mask) == 0:
        raise ValueError("held-out mask is empty")
    e = mask.entries
    probs = None
    if summaries.heldout_prob is not None and summaries.heldout_entries is not None \
            and np.array_equal(summaries.heldout_entries, e):
        probs = summaries.heldout_prob
    elif summaries.samples:
        probs = np.mean([link_probabilities(s, e[:, 0], e[:, 1], e[:, 2]) for s in summaries.samples], axis=0)
    else:
        probs = link_probabilities(summaries.state, e[:, 0], e[:, 1], e[:, 2])
    probs = np.clip(probs, 0.0, 1.0)
    return [ScoredEntry(int(t), int(i), int(j), float(s), int(l))
            for (t, i, j), s, l in zip(e, probs, mask.labels)]

"""Posterior summaries and per-iteration diagnostics shared by the samplers."""
import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import auroc_score
from .model import link_probabilities

__all__ = ["Summaries", "TraceLog", "PosteriorAccumulator", "active_communities", "TRACE_COLUMNS"]

TRACE_COLUMNS = ("iter", "log_joint", "eta", "lambda_max", "active_k", "auroc_heldout")


def active_communities(lam, rel=0.01):
    lam = np.asarray(lam)
    top = lam.max() if lam.size else 0.0
    return int(np.sum(lam > rel * top)) if top > 0 else 0


@dataclass
class Summaries:
    state: object  # last ModelState
    phi_mean: np.ndarray = None
    lam_mean: np.ndarray = None
    p_mean: np.ndarray = None
    eta_mean: float = math.nan
    n_samples: int = 0
    heldout_entries: np.ndarray = None
    heldout_prob: np.ndarray = None
    samples: list = field(default_factory=list)


@dataclass
class TraceLog:
    rows: list = field(default_factory=list)

    def append(self, **row):
        self.rows.append({c: row.get(c, math.nan) for c in TRACE_COLUMNS})

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        if not isinstance(other, TraceLog) or len(self) != len(other):
            return False
        for a, b in zip(self.rows, other.rows):
            for c in TRACE_COLUMNS:
                x, y = a[c], b[c]
                if not (x == y or (isinstance(x, float) and isinstance(y, float)
                                   and math.isnan(x) and math.isnan(y))):
                    return False
        return True


class PosteriorAccumulator:
    """Running means over collected samples, including held-out link probabilities."""

    def __init__(self, mask=None, keep_samples=False):
        self.mask = mask if mask is not None and len(mask) else None
        self.keep_samples = keep_samples
        self.n = 0
        self.phi = self.lam = self.p = self.prob = None
        self.eta = 0.0
        self.samples = []

    def heldout_probs(self, state):
        e = self.mask.entries
        return link_probabilities(state, e[:, 0], e[:, 1], e[:, 2])

    def add(self, state):
        self.n += 1
        w = 1.0 / self.n
        if self.n == 1:
            self.phi, self.lam, self.p = state.phi.copy(), state.lam.copy(), state.p.copy()
            self.eta = float(state.eta)
            if self.mask is not None:
                self.prob = self.heldout_probs(state)
        else:
            self.phi += w * (state.phi - self.phi)
            self.lam += w * (state.lam - self.lam)
            self.p += w * (state.p - self.p)
            self.eta += w * (state.eta - self.eta)
            if self.mask is not None:
                self.prob += w * (self.heldout_probs(state) - self.prob)
        if self.keep_samples:
            self.samples.append(state.copy())

    def current_auroc(self, state=None):
        """AUROC of the running mean (or of ``state`` alone before collection)."""
        if self.mask is None:
            return math.nan
        probs = self.prob if self.n else self.heldout_probs(state)
        try:
            return auroc_score(probs, self.mask.labels)
        except ValueError:
            return math.nan

    def summaries(self, state):
        return Summaries(
            state=state.copy(),
            phi_mean=self.phi,
            lam_mean=self.lam,
            p_mean=self.p,
            eta_mean=self.eta if self.n else math.nan,
            n_samples=self.n,
            heldout_entries=None if self.mask is None else self.mask.entries.copy(),
            heldout_prob=self.prob,
            samples=self.samples,
        )

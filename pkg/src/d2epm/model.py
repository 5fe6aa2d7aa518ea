"""The dynamic edge partition model: parameters, simulation and joint density.

Latent counts are represented as *units*: for each snapshot t and community
k there are ``n ~ Pois(lambda_k)`` units, each an ordered vertex pair (i, j)
drawn from ``phi[t, :, k]`` twice independently. Pair (i, j) with i < j
carries the observed edge count, so ``m_ij ~ Pois(sum_k phi_ik lambda_k
phi_jk)`` and ``G_ij = 1(m_ij >= 1)``. Units with i >= j, or on held-out
cells, are unobserved. Each unit contributes two endpoints, so

    m_ik[t, i, k]  endpoint count of vertex i in community k
    m_k_t[t, k]    = m_ik[t].sum(0) / 2, the unit count
    m_k[k]         = m_k_t[:, k].sum()
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln, xlogy

from .graph import TemporalGraph, cell_keys
from .sampling import (
    DIRICHLET_FLOOR,
    sample_beta,
    sample_dirichlet,
    sample_log_gamma,
    sample_poisson,
)

__all__ = [
    "Hyperparams",
    "ModelState",
    "LatentCounts",
    "intensity",
    "intensities",
    "link_probability",
    "link_probabilities",
    "sample_units",
    "sample_graph",
    "sample_prior",
    "simulate",
    "aggregate_counts",
    "log_joint",
    "check_simplex",
]

SIMPLEX_TOL = 1e-9
ETA_FLOOR = 1e-300


@dataclass(frozen=True)
class Hyperparams:
    """Prior hyperparameters; ``alpha=None`` means 1/K."""

    K: int = 50
    g: float = 0.1
    c0: float = 1.0
    alpha: float = None
    a0: float = 0.01
    b0: float = 0.01

    def __post_init__(self):
        if int(self.K) < 1:
            raise ValueError("K must be a positive integer")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 1.0 / self.K)
        for name in ("g", "c0", "a0", "b0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1); set it explicitly when K = 1")


@dataclass
class ModelState:
    phi: np.ndarray  # (T, N, K), each phi[t, :, k] on the simplex
    lam: np.ndarray  # (K,)
    p: np.ndarray  # (K,)
    eta: float

    @property
    def T(self):
        return self.phi.shape[0]

    @property
    def N(self):
        return self.phi.shape[1]

    @property
    def K(self):
        return self.phi.shape[2]

    def copy(self):
        return ModelState(self.phi.copy(), self.lam.copy(), self.p.copy(), float(self.eta))


@dataclass
class LatentCounts:
    edges: np.ndarray  # (E, 3) training edges (t, i, j)
    m_edge: np.ndarray  # (E,)
    m_ijk: np.ndarray  # (E, K)
    m_ik: np.ndarray  # (T, N, K) endpoint counts, observed and unobserved units
    m_k_t: np.ndarray  # (T, K)
    m_k: np.ndarray  # (K,)


def check_simplex(phi, tol=SIMPLEX_TOL):
    phi = np.asarray(phi)
    if np.any(phi < 0) or np.any(np.abs(phi.sum(axis=1) - 1.0) > tol):
        raise ValueError("membership columns must lie on the probability simplex")


def _check_pair(i, j):
    if np.any(np.asarray(i) == np.asarray(j)):
        raise ValueError("intensity is undefined for self-pairs")


def intensities(state, t, i, j):
    """Vectorized sum_k phi_ik lambda_k phi_jk over arrays of cells."""
    _check_pair(i, j)
    # order the pair so the float result is exactly symmetric
    i, j = np.minimum(i, j), np.maximum(i, j)
    phi = state.phi
    return np.einsum("nk,k,nk->n", phi[t, i], state.lam, phi[t, j])


def intensity(state, t, i, j):
    _check_pair(i, j)
    i, j = min(i, j), max(i, j)
    return float(np.sum(state.phi[t, i] * state.lam * state.phi[t, j]))


def link_probabilities(state, t, i, j):
    return -np.expm1(-intensities(state, t, i, j))


def link_probability(state, t, i, j):
    """Bernoulli-Poisson link: P(G_ij = 1) = 1 - exp(-intensity)."""
    return float(-np.expm1(-intensity(state, t, i, j)))


def sample_units(state, rng, lam=None):
    """Draw every latent unit as arrays ``(t, k, i, j)``.

    Unit counts are Pois(lambda_k) per (t, k); both endpoints are drawn
    from phi[t, :, k] by inversion on a flattened cumulative table.
    """
    T, N, K = state.phi.shape
    lam = state.lam if lam is None else lam
    counts = sample_poisson(np.broadcast_to(lam, (T, K)), rng).ravel()
    total = int(counts.sum())
    if total == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z, z
    slot = np.repeat(np.arange(T * K), counts)
    cdf = np.cumsum(np.transpose(state.phi, (0, 2, 1)), axis=2).reshape(T * K, N)
    table = (cdf + 2.0 * np.arange(T * K)[:, None]).ravel()
    ends = []
    for _ in range(2):
        u = rng.random(total)
        pos = np.searchsorted(table, 2.0 * slot + u, side="right") - slot * N
        ends.append(np.clip(pos, 0, N - 1))
    return slot // K, slot % K, ends[0], ends[1]


def aggregate_counts(T, N, K, edges, m_ijk, unit_t=None, unit_k=None, unit_i=None,
                     unit_j=None, edge_weight=1.0):
    """Endpoint and unit totals from observed edge counts plus extra units.

    ``edge_weight`` rescales the observed contribution (minibatch scaling).
    """
    m_ik = np.zeros((T * N, K), dtype=float if edge_weight != 1.0 else np.int64)
    if len(edges):
        w = m_ijk * edge_weight
        np.add.at(m_ik, edges[:, 0] * N + edges[:, 1], w)
        np.add.at(m_ik, edges[:, 0] * N + edges[:, 2], w)
    if unit_t is not None and len(unit_t):
        np.add.at(m_ik, (unit_t * N + unit_i, unit_k), 1)
        np.add.at(m_ik, (unit_t * N + unit_j, unit_k), 1)
    m_ik = m_ik.reshape(T, N, K)
    m_k_t = m_ik.sum(axis=1) / 2
    if m_ik.dtype.kind == "i":
        m_k_t = m_ik.sum(axis=1) // 2
    return m_ik, m_k_t, m_k_t.sum(axis=0)


def sample_graph(state, rng, return_counts=False):
    """Draw a graph (and optionally its complete latent counts) given the state."""
    T, N, K = state.phi.shape
    ut, uk, ui, uj = sample_units(state, rng)
    obs = ui < uj
    keys = cell_keys(ut[obs], ui[obs], uj[obs], N)
    ukeys, inverse = np.unique(keys, return_inverse=True)
    cells = np.column_stack([ukeys // (N * N), (ukeys // N) % N, ukeys % N])
    graph = TemporalGraph.from_cells(N, T, cells)
    if not return_counts:
        return graph
    m_ijk = np.zeros((len(ukeys), K), dtype=np.int64)
    np.add.at(m_ijk, (inverse.ravel(), uk[obs]), 1)
    hid = ~obs
    m_ik, m_k_t, m_k = aggregate_counts(T, N, K, cells, m_ijk, ut[hid], uk[hid], ui[hid], uj[hid])
    counts = LatentCounts(cells, m_ijk.sum(axis=1), m_ijk, m_ik, m_k_t, m_k)
    return graph, counts


def _sample_eta(shape, scale, rng):
    return max(float(np.exp(sample_log_gamma(shape, rng)) * scale), ETA_FLOOR)


def sample_prior(hyper, N, T, rng, lam=None, eta=None, p=None):
    """Draw all parameters from the prior; any of lam, eta, p may be fixed."""
    K = hyper.K
    if eta is None:
        eta = _sample_eta(hyper.a0, 1.0 / hyper.b0, rng)
    if p is None:
        p = sample_beta(np.full(K, hyper.c0 * hyper.alpha), np.full(K, hyper.c0 * (1 - hyper.alpha)), rng)
        p = np.clip(p, 1e-300, 1 - 1e-16)
    p = np.asarray(p, dtype=float)
    if lam is None:
        lam = np.exp(sample_log_gamma(np.full(K, hyper.g), rng)) * (p / (1 - p))
    lam = np.asarray(lam, dtype=float)
    phi = np.empty((T, N, K))
    phi[0] = sample_dirichlet(np.full((N, K), eta), rng, axis=0)
    for t in range(1, T):
        phi[t] = sample_dirichlet(eta * N * phi[t - 1], rng, axis=0)
    return ModelState(phi, lam, p, float(eta))


def simulate(hyper, N, T, rng, lam=None, eta=None, p=None):
    """Forward-simulate parameters and a graph. Returns ``(state, graph)``."""
    if N < 2 or T < 1:
        raise ValueError("simulate needs N >= 2 and T >= 1")
    state = sample_prior(hyper, N, T, rng, lam=lam, eta=eta, p=p)
    return state, sample_graph(state, rng)


def _log_dirichlet(x, a):
    # columns along axis 0
    a = np.maximum(a, DIRICHLET_FLOOR)
    x = np.maximum(x, np.finfo(float).tiny)
    return gammaln(a.sum(axis=0)) - gammaln(a).sum(axis=0) + xlogy(a - 1, x).sum(axis=0)


def log_joint(state, counts, hyper, aux=None):
    """Log joint density of parameters and latent units.

    The factorial normalizers of unobserved units are dropped (they do not
    depend on any parameter). With ``aux``, each Dirichlet transition
    phi[t-1] -> phi[t] is replaced by the Poisson likelihood of the
    auxiliary table counts ``aux.xi[t]``; that is the density the
    membership updates condition on.
    """
    phi, lam, p, eta = state.phi, state.lam, state.p, state.eta
    T, N, K = phi.shape
    check_simplex(phi)
    if eta <= 0 or np.any(lam < 0) or np.any((p <= 0) | (p >= 1)):
        return -np.inf

    lp = (hyper.a0 - 1) * np.log(eta) - eta * hyper.b0 + hyper.a0 * np.log(hyper.b0) - gammaln(hyper.a0)
    a, b = hyper.c0 * hyper.alpha, hyper.c0 * (1 - hyper.alpha)
    lp += np.sum((a - 1) * np.log(p) + (b - 1) * np.log1p(-p) - (gammaln(a) + gammaln(b) - gammaln(a + b)))
    scale = p / (1 - p)
    lp += np.sum(xlogy(hyper.g - 1, lam) - lam / scale - hyper.g * np.log(scale) - gammaln(hyper.g))

    lp += _log_dirichlet(phi[0], np.full((N, K), eta)).sum()
    if aux is None:
        for t in range(1, T):
            lp += _log_dirichlet(phi[t], eta * N * phi[t - 1]).sum()
    else:
        for t in range(1, T):
            rate = -eta * N * phi[t - 1] * aux.log1m_zeta[t][None, :]
            xi = aux.xi[t]
            lp += np.sum(xlogy(xi, rate) - rate - gammaln(xi + 1))

    lp += np.sum(xlogy(counts.m_ik, phi))
    lp += np.sum(xlogy(counts.m_k_t, lam[None, :])) - T * lam.sum()
    lp -= np.sum(gammaln(np.asarray(counts.m_ijk) + 1))
    if len(counts.m_edge) and np.any(counts.m_edge < 1):
        return -np.inf
    return float(lp)

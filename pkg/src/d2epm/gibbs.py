"""Batch Gibbs sampler with negative-binomial augmentation of the Dirichlet chain.

One sweep:

1. latent counts on training edges (zero-truncated Poisson, then a
   multinomial split over communities) and the unobserved units;
2. backward pass t = T..1 drawing the table counts xi and the Beta
   auxiliaries zeta that carry count information from t to t-1;
3. eta from its gamma conditional given (xi, zeta);
4. forward pass t = 1..T drawing each phi[t, :, k] from its Dirichlet
   conditional;
5. community probabilities p_k and weights lambda_k.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .graph import Observation
from .model import (
    ETA_FLOOR,
    LatentCounts,
    ModelState,
    aggregate_counts,
    log_joint,
    sample_units,
)
from .sampling import (
    DIRICHLET_FLOOR,
    RngStream,
    sample_crt,
    sample_dirichlet,
    sample_log_beta,
    sample_log_gamma,
    sample_ztp,
)
from .trace import PosteriorAccumulator, TraceLog, active_communities

__all__ = [
    "AuxiliaryVars",
    "GibbsConfig",
    "GibbsKernel",
    "initial_state",
    "resample_edge_counts",
    "partition_edge_counts",
    "sample_hidden_units",
    "backward_pass",
    "resample_eta",
    "resample_memberships",
    "resample_weights",
    "gibbs_sweep",
    "run_gibbs",
]

logger = logging.getLogger(__name__)


@dataclass
class AuxiliaryVars:
    zeta: np.ndarray  # (T, K)
    log1m_zeta: np.ndarray  # (T, K), log(1 - zeta) kept separately for precision
    xi: np.ndarray  # (T, N, K)


@dataclass(frozen=True)
class GibbsConfig:
    iterations: int = 3000
    burn_in: int = 2000
    collect_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.collect_every < 1:
            raise ValueError("collect_every must be positive")


def initial_state(hyper, obs, rng):
    T, N, K = obs.T, obs.N, hyper.K
    phi = sample_dirichlet(np.ones((T, N, K)), rng, axis=1)
    lam = np.full(K, max(2.0 * len(obs.edges) / (T * K), 1.0))
    return ModelState(phi, lam, np.full(K, 0.5), 1.0)


def partition_edge_counts(state, edges, rng):
    """ZTP count per observed edge and its multinomial split over communities."""
    K = state.K
    if len(edges) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, K), dtype=np.int64)
    t, i, j = edges[:, 0], edges[:, 1], edges[:, 2]
    rates = state.phi[t, i] * state.lam * state.phi[t, j]
    total = rates.sum(axis=1)
    if np.any(~(total > 0)):
        bad = edges[np.flatnonzero(~(total > 0))[0]]
        raise FloatingPointError(f"observed edge {tuple(bad)} has zero intensity")
    m = sample_ztp(total, rng)
    return m, rng.multinomial(m, rates / total[:, None])


def sample_hidden_units(state, obs, rng):
    """Units that never reach the data: pairs with i >= j and held-out cells.

    They are a thinned Poisson process, so they are drawn by simulating all
    units and keeping the unobserved ones.
    """
    ut, uk, ui, uj = sample_units(state, rng)
    hidden = (ui >= uj) | obs.is_masked(ut, ui, uj)
    return ut[hidden], uk[hidden], ui[hidden], uj[hidden]


def resample_edge_counts(state, obs, rng):
    """Latent counts given the graph: ZTP + multinomial on training edges,
    prior draws for every unobserved unit (i >= j, or a held-out cell)."""
    T, N, K = state.phi.shape
    edges = obs.edges
    m, m_ijk = partition_edge_counts(state, edges, rng)
    units = sample_hidden_units(state, obs, rng)
    m_ik, m_k_t, m_k = aggregate_counts(T, N, K, edges, m_ijk, *units)
    return LatentCounts(edges, m, m_ijk, m_ik, m_k_t, m_k)


def backward_pass(state, counts, rng, swap_zeta=False):
    """Draw (xi, zeta) for t = T..1.

    At time t the counts attributed to phi[t] are the endpoint counts plus
    the tables xi[t+1] passed back from t+1. Their total gives
    zeta[t] ~ Beta(total, eta N) and each count is split into tables
    xi[t] ~ CRT(count, eta N phi[t-1]); at t = 1 the prior concentration is
    eta for every vertex.
    """
    phi, eta = state.phi, state.eta
    T, N, K = phi.shape
    m_ik = np.asarray(counts.m_ik)
    xi = np.zeros((T, N, K), dtype=np.int64)
    log_zeta = np.zeros((T, K))
    log1m = np.zeros((T, K))
    carry = np.zeros((N, K), dtype=np.int64)
    for t in range(T - 1, -1, -1):
        x = m_ik[t] + carry
        tot = np.maximum(x.sum(axis=0), DIRICHLET_FLOOR)
        a, b = (np.full(K, eta * N), tot) if swap_zeta else (tot, np.full(K, eta * N))
        log_zeta[t], log1m[t] = sample_log_beta(a, b, rng)
        conc = eta * N * phi[t - 1] if t > 0 else np.full((N, K), eta)
        xi[t] = sample_crt(x, conc, rng)
        carry = xi[t]
    return AuxiliaryVars(np.exp(log_zeta), log1m, xi)


def eta_posterior(N, aux, hyper):
    """Shape and scale of the gamma conditional of eta."""
    shape = hyper.a0 + aux.xi.sum()
    rate = hyper.b0 - N * aux.log1m_zeta.sum()
    if not rate > 0:
        raise FloatingPointError("nonpositive rate in the eta conditional")
    return float(shape), float(1.0 / rate)


def resample_eta(state, aux, hyper, rng):
    shape, scale = eta_posterior(state.N, aux, hyper)
    return max(float(np.exp(sample_log_gamma(shape, rng)) * scale), ETA_FLOOR)


def resample_memberships(state, counts, aux, rng):
    """Forward pass t = 1..T of Dirichlet draws; returns the new phi array."""
    phi_old, eta = state.phi, state.eta
    T, N, K = phi_old.shape
    m_ik = np.asarray(counts.m_ik)
    phi = np.empty_like(phi_old)
    for t in range(T):
        prior = np.full((N, K), eta) if t == 0 else eta * N * phi[t - 1]
        post = prior + m_ik[t]
        if t + 1 < T:
            post = post + aux.xi[t + 1]
        phi[t] = sample_dirichlet(post, rng, axis=0)
    return phi


def weights_proposal(m_k, hyper):
    """Beta proposal parameters for the collapsed update of p_k."""
    return hyper.c0 * hyper.alpha + m_k, hyper.c0 * (1 - hyper.alpha) + hyper.g


def resample_weights(counts, hyper, state, rng, lam_scale=1.0):
    """Draw p_k with lambda_k integrated out, then lambda_k given p_k.

    With lambda_k integrated, m_k ~ NB(g, q_k) where
    q_k = T p_k / (1 + (T - 1) p_k). In q the conditional is
    Beta(c0 alpha + m_k, c0 (1 - alpha) + g) times (T - (T - 1) q)^(-c0),
    so an independence Metropolis step with that Beta as proposal is exact
    (and always accepts when T = 1). Then
    lambda_k ~ Gam(g + m_k, scale p_k / (1 + (T - 1) p_k)).
    """
    T = state.T
    m_k = np.asarray(counts.m_k, dtype=float)
    a, b = weights_proposal(m_k, hyper)
    p = np.asarray(state.p, dtype=float)
    q_cur = T * p / (1.0 + (T - 1) * p)
    log_q, _ = sample_log_beta(a, np.full_like(a, b), rng)
    q_new = np.exp(log_q)
    log_ratio = -hyper.c0 * (np.log(T - (T - 1) * q_new) - np.log(T - (T - 1) * q_cur))
    accept = np.log(rng.random(len(p))) < log_ratio
    q = np.where(accept, q_new, q_cur)
    p = np.clip(q / (T - (T - 1) * q), 1e-300, 1.0 - 1e-16)
    scale = p / (1.0 + (T - 1) * p) * lam_scale
    lam = np.exp(sample_log_gamma(hyper.g + m_k, rng)) * scale
    return lam, p


class GibbsKernel:
    """One sweep of the sampler. Subclass and override a step to alter it."""

    def counts(self, state, obs, rng):
        return resample_edge_counts(state, obs, rng)

    def backward(self, state, counts, rng):
        return backward_pass(state, counts, rng)

    def eta(self, state, aux, hyper, rng):
        return resample_eta(state, aux, hyper, rng)

    def memberships(self, state, counts, aux, rng):
        return resample_memberships(state, counts, aux, rng)

    def weights(self, counts, hyper, state, rng):
        return resample_weights(counts, hyper, state, rng)

    def sweep(self, state, obs, hyper, rng):
        counts = self.counts(state, obs, rng)
        aux = self.backward(state, counts, rng)
        state = ModelState(state.phi, state.lam, state.p, self.eta(state, aux, hyper, rng))
        state.phi = self.memberships(state, counts, aux, rng)
        state.lam, state.p = self.weights(counts, hyper, state, rng)
        return state, counts, aux


def gibbs_sweep(state, obs, hyper, rng, kernel=None):
    return (kernel or GibbsKernel()).sweep(state, obs, hyper, rng)


def run_gibbs(graph, mask, hyper, config, rng=None, init=None, eval_every=0,
              keep_samples=False, kernel=None):
    """Run the batch sampler; returns ``(Summaries, TraceLog)``.

    ``eval_every > 0`` records the held-out AUROC of the running posterior
    mean every that many iterations.
    """
    obs = Observation.from_graph(graph, mask)
    if len(obs.edges) == 0:
        raise ValueError("no training edges left after masking")
    if hyper.K < 1:
        raise ValueError("K must be positive")
    rng = RngStream(config.seed) if rng is None else rng
    kernel = kernel or GibbsKernel()
    state = initial_state(hyper, obs, rng) if init is None else init.copy()
    acc = PosteriorAccumulator(mask, keep_samples=keep_samples)
    trace = TraceLog()
    for it in range(config.iterations):
        try:
            state, counts, _ = kernel.sweep(state, obs, hyper, rng)
        except Exception as exc:
            raise RuntimeError(f"Gibbs sweep failed at iteration {it}: {exc}") from exc
        if it >= config.burn_in and (it - config.burn_in) % config.collect_every == 0:
            acc.add(state)
        score = math.nan
        if eval_every and (it + 1) % eval_every == 0:
            score = acc.current_auroc(state)
        trace.append(iter=it, log_joint=log_joint(state, counts, hyper), eta=state.eta,
                     lambda_max=float(state.lam.max()), active_k=active_communities(state.lam),
                     auroc_heldout=score)
    return acc.summaries(state), trace

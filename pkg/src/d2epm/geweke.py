"""Joint-distribution (Geweke) test of the Gibbs conditionals.

The marginal-conditional simulator draws parameters from the prior and then
the graph and latent units given the parameters. The successive-conditional
simulator alternates one Gibbs sweep with a fresh graph drawn given the
current parameters. Both target the same joint law, so the moments of any
statistic must agree.
"""
from dataclasses import dataclass

import numpy as np

from .gibbs import GibbsKernel, backward_pass, resample_weights
from .graph import Observation
from .model import Hyperparams, sample_graph, sample_prior
from .sampling import RngStream, sample_dirichlet

__all__ = [
    "GewekeResult",
    "GEWEKE_HYPER",
    "STATISTICS",
    "MUTANTS",
    "geweke_test",
    "marginal_samples",
    "batch_means_var",
]

# Finite fourth moments of lambda need c0 (1 - alpha) > 4.
GEWEKE_HYPER = Hyperparams(K=2, g=4.0, c0=10.0, alpha=0.3, a0=2.0, b0=2.0)

STATISTICS = ("eta", "lambda_sum", "phi_2_1_1", "m_1")


def _stats(state, m_k):
    base = np.array([state.eta, state.lam.sum(), state.phi[1, 0, 0], m_k[0]], dtype=float)
    return np.concatenate([base, base ** 2])


def stat_names():
    return [f"{s}{suffix}" for suffix in ("", "^2") for s in STATISTICS]


class LambdaScaleMutant(GibbsKernel):
    """Doubles the scale of the lambda conditional."""

    def weights(self, counts, hyper, state, rng):
        return resample_weights(counts, hyper, state, rng, lam_scale=2.0)


class ZetaSwapMutant(GibbsKernel):
    """Swaps the two Beta parameters of zeta."""

    def backward(self, state, counts, rng):
        return backward_pass(state, counts, rng, swap_zeta=True)


class PhiPriorShiftMutant(GibbsKernel):
    """Centres each phi[t] update on the stale phi[t] instead of the new phi[t-1]."""

    def memberships(self, state, counts, aux, rng):
        phi_old, eta = state.phi, state.eta
        T, N, K = phi_old.shape
        phi = np.empty_like(phi_old)
        for t in range(T):
            prior = np.full((N, K), eta) if t == 0 else eta * N * phi_old[t]
            post = prior + counts.m_ik[t]
            if t + 1 < T:
                post = post + aux.xi[t + 1]
            phi[t] = sample_dirichlet(post, rng, axis=0)
        return phi


MUTANTS = {
    "none": GibbsKernel,
    "lambda-scale": LambdaScaleMutant,
    "phi-prior-shift": PhiPriorShiftMutant,
    "zeta-swap": ZetaSwapMutant,
}


@dataclass
class GewekeResult:
    names: list
    z: np.ndarray
    mc_mean: np.ndarray
    sc_mean: np.ndarray
    diverged_at: int = None

    @property
    def max_abs_z(self):
        return float(np.max(np.abs(self.z)))

    def as_dict(self):
        return dict(zip(self.names, self.z.tolist()))


def batch_means_var(x, n_batches=50):
    """Variance of the sample mean of a correlated series by batch means."""
    x = np.asarray(x, dtype=float)
    n = len(x) // n_batches * n_batches
    if n == 0:
        raise ValueError("series too short for batch means")
    means = x[:n].reshape(n_batches, -1, *x.shape[1:]).mean(axis=1)
    return means.var(axis=0, ddof=1) / n_batches


def marginal_samples(hyper, dims, iterations, rng):
    """Statistics of independent draws from the prior and the data model."""
    N, T = dims
    mc = np.empty((iterations, 2 * len(STATISTICS)))
    for s in range(iterations):
        state = sample_prior(hyper, N, T, rng)
        _, counts = sample_graph(state, rng, return_counts=True)
        mc[s] = _stats(state, counts.m_k)
    return mc


def geweke_test(hyper=GEWEKE_HYPER, dims=(4, 3), iterations=50_000, rng=None,
                kernel=None, burn_in=None, max_rate=1e4, marginal=None):
    """Compare prior and Gibbs-chain moments; returns per-statistic z-scores.

    ``dims`` is ``(N, T)``; K comes from ``hyper``. A chain whose total
    weight sum(lambda) exceeds ``max_rate`` (far outside the prior's bulk) is
    stopped there and scored on the samples collected so far. ``marginal``
    reuses statistics from :func:`marginal_samples` (one row per sample).
    """
    if iterations < 1:
        raise ValueError("iterations must be positive")
    N, T = dims
    rng = RngStream(0) if rng is None else rng
    kernel = kernel or GibbsKernel()
    burn_in = max(iterations // 100, 10) if burn_in is None else burn_in

    mc = marginal_samples(hyper, dims, iterations, rng) if marginal is None else np.asarray(marginal)
    if len(mc) < 2:
        raise ValueError("need at least two marginal samples")

    sc = np.empty((iterations, mc.shape[1]))
    state = sample_prior(hyper, N, T, rng)
    diverged_at = None
    for s in range(-burn_in, iterations):
        obs = Observation.from_graph(sample_graph(state, rng))
        state, counts, _ = kernel.sweep(state, obs, hyper, rng)
        if s >= 0:
            sc[s] = _stats(state, counts.m_k)
        if state.lam.sum() > max_rate:
            diverged_at = s
            sc = sc[:max(s + 1, 0)]
            break
    if len(sc) < 100:
        # too short for batch means; pad with the diverged state
        sc = np.concatenate([sc, np.repeat(_stats(state, counts.m_k)[None], 100 - len(sc), axis=0)])

    if not (np.all(np.isfinite(mc)) and np.all(np.isfinite(sc))):
        raise FloatingPointError("non-finite Geweke statistic")
    mc_mean, sc_mean = mc.mean(axis=0), sc.mean(axis=0)
    se2 = mc.var(axis=0, ddof=1) / len(mc) + batch_means_var(sc)
    z = (sc_mean - mc_mean) / np.sqrt(se2)
    return GewekeResult(stat_names(), z, mc_mean, sc_mean, diverged_at)

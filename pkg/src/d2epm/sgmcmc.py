"""Stochastic gradient Riemannian Langevin updates for the membership simplexes.

Each iteration resamples the latent counts on a minibatch of training edges
(plus all unobserved units), updates eta, p and lambda from their Gibbs
conditionals with minibatch counts scaled by rho = |edges| / |minibatch|,
and then moves every phi[t, :, k] by one preconditioned Langevin step in
either parameterization:

* expanded mean: phi = phi_hat / sum(phi_hat) with phi_hat > 0, Fisher
  metric diag(1 / phi_hat) and reflection at zero;
* reduced mean: psi = phi[:N-1], multinomial Fisher metric
  M (diag(1 / psi) + 1 1^T / (1 - sum psi)), mirrored onto the simplex.

Arrays for a single time step are (N, K), one simplex per column.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .gibbs import (
    backward_pass,
    initial_state,
    partition_edge_counts,
    resample_eta,
    resample_weights,
    sample_hidden_units,
)
from .graph import Observation
from .model import LatentCounts, ModelState, aggregate_counts, log_joint
from .sampling import RngStream
from .trace import PosteriorAccumulator, TraceLog, active_communities

__all__ = [
    "SgmcmcConfig",
    "VARIANTS",
    "step_size",
    "draw_minibatch",
    "grad_expanded",
    "step_expanded",
    "grad_reduced",
    "step_reduced",
    "mirror",
    "ema_mass",
    "fisher_reduced",
    "fisher_expanded",
    "gamma_expanded",
    "gamma_reduced",
    "run_sgmcmc",
]

logger = logging.getLogger(__name__)

VARIANTS = ("expanded-mean", "reduced-mean")
DENOM_FLOOR = 1e-10


@dataclass(frozen=True)
class SgmcmcConfig:
    variant: str = "expanded-mean"
    iterations: int = 3000
    burn_in: int = 2000
    collect_every: int = 1
    minibatch_fraction: float = 0.25
    step_a: float = 10.0
    step_b: float = 1000.0
    step_c: float = 0.6
    mk_ema_decay: float = 0.9
    seed: int = 0
    inject_noise: bool = True
    strict_step_c: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.collect_every < 1:
            raise ValueError("collect_every must be positive")
        if not 0.0 < self.minibatch_fraction <= 1.0:
            raise ValueError("minibatch_fraction must lie in (0, 1]")
        if not (self.step_a > 0 and self.step_b > 0 and self.step_c > 0):
            raise ValueError("step size constants must be positive")
        if self.strict_step_c and not 0.5 < self.step_c <= 1.0:
            raise ValueError("step_c outside (0.5, 1]; pass strict_step_c=False to allow it")
        if not 0.0 < self.mk_ema_decay < 1.0:
            raise ValueError("mk_ema_decay must lie in (0, 1)")


def step_size(l, a, b, c):
    """Polynomially decaying step size (a (1 + l / b)) ** -c."""
    return (a * (1.0 + l / b)) ** (-c)


def draw_minibatch(edges, fraction, rng):
    """Uniform subset of ceil(fraction * E) training edges and its scale E / size."""
    edges = np.asarray(edges)
    E = len(edges)
    if E == 0:
        raise ValueError("no training edges to subsample")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    size = min(E, math.ceil(fraction * E))
    if size == E:
        return edges, 1.0
    idx = np.sort(rng.choice(E, size=size, replace=False))
    return edges[idx], E / size


def grad_expanded(phi_hat, m_tilde, prior, rho):
    """Gradient of the log posterior in the unnormalized coordinates phi_hat.

    (rho m_i + a_i - 1) / phi_hat_i - rho m_. / phi_hat_. - 1, column-wise.
    """
    s = phi_hat.sum(axis=0)
    return (rho * m_tilde + prior - 1.0) / phi_hat - rho * m_tilde.sum(axis=0) / s - 1.0


def step_expanded(phi_hat, m_tilde, prior, rho, eps, rng, noise=True):
    """One reflected Langevin step; returns ``(phi_hat, phi)``.

    With metric diag(1 / phi_hat) the drift is
    (rho m + a) - (rho m_. + phi_hat_.) phi and the noise variance is
    2 eps phi_hat.
    """
    s = phi_hat.sum(axis=0)
    phi = phi_hat / s
    drift = (rho * m_tilde + prior) - (rho * m_tilde.sum(axis=0) + s) * phi
    new = phi_hat + eps * drift
    if noise:
        new = new + rng.standard_normal(phi_hat.shape) * np.sqrt(2.0 * eps * phi_hat)
    new = np.maximum(np.abs(new), np.finfo(float).tiny)
    return new, new / new.sum(axis=0)


def grad_reduced(phi, m_tilde, prior, rho):
    """Gradient in psi = phi[:N-1]; returns an (N-1, K) array."""
    psi = np.maximum(phi[:-1], DENOM_FLOOR)
    last = np.maximum(1.0 - phi[:-1].sum(axis=0), DENOM_FLOOR)
    num = rho * m_tilde + prior - 1.0
    return num[:-1] / psi - num[-1] / last


def mirror(x):
    """Map a perturbed column back to the simplex: reflect negatives, renormalize."""
    x = np.abs(x)
    s = x.sum(axis=0)
    if np.any(s <= 0):
        raise FloatingPointError("mirrored column has zero mass")
    return x / s


def step_reduced(phi, m_tilde, prior, rho, M, eps, rng, noise=True):
    """One preconditioned Langevin step on the full N-vector, then mirror.

    Drift (eps / M) [(rho m + a) - (m_. + a_.) phi], noise variance
    (2 eps / M) phi per coordinate.
    """
    h = eps / M
    drift = (rho * m_tilde + prior) - (m_tilde.sum(axis=0) + prior.sum(axis=0)) * phi
    new = phi + h * drift
    if noise:
        new = new + rng.standard_normal(phi.shape) * np.sqrt(2.0 * h * np.maximum(phi, 0.0))
    return mirror(new)


def ema_mass(prev, scaled, decay):
    """Running estimate of the full-data count behind each column, floored at one.

    The first call (``prev is None``) takes the current estimate as is.
    """
    scaled = np.asarray(scaled, dtype=float)
    new = scaled if prev is None else decay * prev + (1.0 - decay) * scaled
    return np.maximum(new, 1.0)


def fisher_reduced(psi, M):
    """Expected Fisher information of Mult(M, [psi, 1 - sum psi]) in psi."""
    psi = np.asarray(psi, dtype=float)
    return M * (np.diag(1.0 / psi) + 1.0 / (1.0 - psi.sum()))


def fisher_expanded(phi_hat):
    """Fisher metric of independent unit-scale gammas in phi_hat: diag(1 / phi_hat)."""
    return np.diag(1.0 / np.asarray(phi_hat, dtype=float))


def gamma_expanded(phi_hat):
    """Divergence of the inverse metric diag(phi_hat): identically one."""
    return np.ones_like(phi_hat)


def gamma_reduced(psi, M):
    """Divergence of the inverse multinomial Fisher matrix: (1 - N psi_i) / M."""
    psi = np.asarray(psi, dtype=float)
    N = psi.shape[0] + 1
    return (1.0 - N * psi) / M


class _Sampler:
    def __init__(self, obs, hyper, config, state, rng):
        self.obs, self.hyper, self.config, self.rng = obs, hyper, config, rng
        self.state = state
        self.phi_hat = state.phi.copy()
        T, _, K = state.phi.shape
        self.M = np.ones((T, K))  # running estimate of the full-data count per column
        self._fresh = np.ones(T, dtype=bool)

    def iteration(self, l):
        obs, hyper, cfg, rng = self.obs, self.hyper, self.config, self.rng
        state = self.state
        T, N, K = state.phi.shape
        batch, rho = draw_minibatch(obs.edges, cfg.minibatch_fraction, rng)
        m, m_ijk = partition_edge_counts(state, batch, rng)
        e_mb, _, _ = aggregate_counts(T, N, K, batch, m_ijk)
        e_hid, _, _ = aggregate_counts(T, N, K, np.zeros((0, 3), dtype=np.int64), None,
                                       *sample_hidden_units(state, obs, rng))
        full = rho * e_mb + e_hid
        full_int = np.rint(full).astype(np.int64)
        m_k_t = full.sum(axis=1) / 2.0
        counts = LatentCounts(batch, m, m_ijk, full_int, full_int.sum(axis=1) // 2, m_k_t.sum(axis=0))

        aux = backward_pass(state, counts, rng)
        state = ModelState(state.phi, state.lam, state.p, resample_eta(state, aux, hyper, rng))
        state.lam, state.p = resample_weights(counts, hyper, state, rng)

        eps = step_size(l, cfg.step_a, cfg.step_b, cfg.step_c)
        phi = np.empty_like(state.phi)
        for t in range(T):
            extra = e_hid[t] + (aux.xi[t + 1] if t + 1 < T else 0)
            m_tilde = e_mb[t] + extra / rho
            prior = np.full((N, K), state.eta) if t == 0 else state.eta * N * phi[t - 1]
            if cfg.variant == "expanded-mean":
                self.phi_hat[t], phi[t] = step_expanded(self.phi_hat[t], m_tilde, prior, rho, eps,
                                                        rng, noise=cfg.inject_noise)
            else:
                prev = None if self._fresh[t] else self.M[t]
                self.M[t] = ema_mass(prev, rho * m_tilde.sum(axis=0), cfg.mk_ema_decay)
                self._fresh[t] = False
                phi[t] = step_reduced(state.phi[t], m_tilde, prior, rho, self.M[t], eps, rng,
                                      noise=cfg.inject_noise)
        state.phi = phi
        self.state = state
        return state, counts


def run_sgmcmc(graph, mask, hyper, config, rng=None, init=None, eval_every=0,
               keep_samples=False):
    """Run SGRLD; returns ``(Summaries, TraceLog)``.

    The trace's log_joint column is evaluated on the minibatch counts scaled
    to the full data, so it is a noisy diagnostic.
    """
    obs = Observation.from_graph(graph, mask)
    if len(obs.edges) == 0:
        raise ValueError("no training edges left after masking")
    rng = RngStream(config.seed) if rng is None else rng
    state = initial_state(hyper, obs, rng) if init is None else init.copy()
    sampler = _Sampler(obs, hyper, config, state, rng)
    acc = PosteriorAccumulator(mask, keep_samples=keep_samples)
    trace = TraceLog()
    for it in range(config.iterations):
        try:
            state, counts = sampler.iteration(it)
        except Exception as exc:
            raise RuntimeError(f"SGRLD iteration {it} failed: {exc}") from exc
        if it >= config.burn_in and (it - config.burn_in) % config.collect_every == 0:
            acc.add(state)
        score = math.nan
        if eval_every and (it + 1) % eval_every == 0:
            score = acc.current_auroc(state)
        trace.append(iter=it, log_joint=log_joint(state, counts, hyper), eta=state.eta,
                     lambda_max=float(state.lam.max()), active_k=active_communities(state.lam),
                     auroc_heldout=score)
    return acc.summaries(state), trace

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from d2epm.gibbs import backward_pass
from d2epm.graph import HeldOutMask
from d2epm.model import Hyperparams, ModelState, log_joint, sample_graph, simulate
from d2epm.sampling import RngStream
from d2epm.sgmcmc import (
    SgmcmcConfig,
    draw_minibatch,
    ema_mass,
    fisher_expanded,
    fisher_reduced,
    gamma_expanded,
    gamma_reduced,
    grad_expanded,
    grad_reduced,
    mirror,
    run_sgmcmc,
    step_expanded,
    step_reduced,
    step_size,
)

HYPER = Hyperparams(K=3, g=0.5, c0=2.0, a0=1.5, b0=0.7)


# -- finite-difference oracles ------------------------------------------------

def gradient_instance(seed):
    """Random small state with units, auxiliary tables and a chosen slice t."""
    rng = np.random.default_rng(seed)
    N, T, K = int(rng.integers(3, 7)), int(rng.integers(2, 4)), 3
    phi = rng.dirichlet(np.full(N, 2.0), size=(T, K)).transpose(0, 2, 1)
    state = ModelState(phi, rng.gamma(4.0, 2.0, size=K), rng.uniform(0.2, 0.8, size=K),
                       float(rng.uniform(0.5, 2.0)))
    _, counts = sample_graph(state, RngStream(seed), return_counts=True)
    aux = backward_pass(state, counts, RngStream(seed, 1))
    t = int(rng.integers(0, T))
    rho = float(rng.uniform(1.0, 4.0))
    return state, counts, aux, t, rho


def slice_target(state, counts, aux, t):
    """log_joint as a function of phi[t], with phi[t]'s own prior restored for t > 0."""
    N = state.N

    def f(phi_t):
        phi = state.phi.copy()
        phi[t] = phi_t
        s = ModelState(phi, state.lam, state.p, state.eta)
        lp = log_joint(s, counts, HYPER, aux)
        if t > 0:
            for k in range(phi.shape[2]):
                lp += stats.dirichlet.logpdf(phi_t[:, k], state.eta * N * phi[t - 1, :, k])
        return lp

    return f


def slice_inputs(state, counts, aux, t, rho):
    T, N, _ = state.phi.shape
    carry = aux.xi[t + 1] if t + 1 < T else 0
    m_tilde = (counts.m_ik[t] + carry) / rho
    prior = np.full_like(state.phi[t], state.eta) if t == 0 else state.eta * N * state.phi[t - 1]
    return m_tilde, prior


def fd_reduced(f, phi_t, rel=1e-4):
    N, K = phi_t.shape
    out = np.zeros((N - 1, K))
    for k in range(K):
        for i in range(N - 1):
            h = rel * min(phi_t[i, k], phi_t[-1, k])
            up, dn = phi_t.copy(), phi_t.copy()
            up[i, k] += h
            up[-1, k] -= h
            dn[i, k] -= h
            dn[-1, k] += h
            out[i, k] = (f(up) - f(dn)) / (2 * h)
    return out


def expanded_target(f, prior):
    N = prior.shape[0]
    a_sum = prior.sum(axis=0)

    def g(phi_hat):
        s = phi_hat.sum(axis=0)
        return (f(phi_hat / s) + np.sum(stats.gamma.logpdf(s, a_sum))
                - (N - 1) * np.sum(np.log(s)))

    return g


def fd_expanded(g, phi_hat, rel=1e-4):
    out = np.zeros_like(phi_hat)
    for idx in np.ndindex(phi_hat.shape):
        h = rel * phi_hat[idx]
        up, dn = phi_hat.copy(), phi_hat.copy()
        up[idx] += h
        dn[idx] -= h
        out[idx] = (g(up) - g(dn)) / (2 * h)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(b), 1.0))


class TestGradients:
    @pytest.mark.parametrize("seed", range(20))
    def test_reduced_matches_finite_differences(self, seed):
        state, counts, aux, t, rho = gradient_instance(seed)
        m_tilde, prior = slice_inputs(state, counts, aux, t, rho)
        f = slice_target(state, counts, aux, t)
        g = grad_reduced(state.phi[t], m_tilde, prior, rho)
        assert rel_err(g, fd_reduced(f, state.phi[t])) < 1e-5

    @pytest.mark.parametrize("seed", range(20))
    def test_expanded_matches_finite_differences(self, seed):
        state, counts, aux, t, rho = gradient_instance(seed)
        m_tilde, prior = slice_inputs(state, counts, aux, t, rho)
        scale = np.random.default_rng(seed + 100).gamma(prior.sum(axis=0))
        phi_hat = state.phi[t] * scale
        g = grad_expanded(phi_hat, m_tilde, prior, rho)
        target = expanded_target(slice_target(state, counts, aux, t), prior)
        assert rel_err(g, fd_expanded(target, phi_hat)) < 1e-5


def multinomial_fisher_by_enumeration(psi_vals, M):
    """Expected negative Hessian of log Mult(x; M, [psi, 1 - sum psi]), summed over all x."""
    n = len(psi_vals) + 1
    psi = sp.symbols(f"p0:{n - 1}", positive=True)
    probs = list(psi) + [1 - sum(psi)]
    sub = dict(zip(psi, psi_vals))
    p_num = [float(p.subs(sub)) for p in probs]
    info = np.zeros((n - 1, n - 1))
    for x in itertools.product(range(M + 1), repeat=n - 1):
        if sum(x) > M:
            continue
        xs = list(x) + [M - sum(x)]
        loglik = sum(xi * sp.log(p) for xi, p in zip(xs, probs))
        hess = sp.hessian(loglik, psi).subs(sub)
        w = math.exp(math.lgamma(M + 1) - sum(math.lgamma(v + 1) for v in xs)
                     + sum(v * math.log(p) for v, p in zip(xs, p_num)))
        info -= w * np.array(hess, dtype=float)
    return info


def fd_divergence(inv_metric, x, h=1e-6):
    """Row divergence sum_j d G^{-1}_{ij} / d x_j by central differences."""
    div = np.zeros(len(x))
    for j in range(len(x)):
        up, dn = x.copy(), x.copy()
        up[j] += h
        dn[j] -= h
        div += ((inv_metric(up) - inv_metric(dn)) / (2 * h))[:, j]
    return div


class TestMetric:
    @pytest.mark.parametrize("psi", [(0.2, 0.3), (0.6, 0.1), (1 / 3, 1 / 3)])
    def test_fisher_matches_enumeration(self, psi):
        expected = multinomial_fisher_by_enumeration(psi, 8)
        np.testing.assert_allclose(fisher_reduced(np.array(psi), 8), expected, rtol=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_gamma_reduced_is_divergence_of_inverse_metric(self, seed):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(3, 7))
        psi = rng.dirichlet(np.full(N, 3.0))[:-1]
        M = float(rng.uniform(1, 50))
        div = fd_divergence(lambda x: np.linalg.inv(fisher_reduced(x, M)), psi)
        np.testing.assert_allclose(gamma_reduced(psi, M), div, rtol=1e-5, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_gamma_expanded_is_divergence_of_inverse_metric(self, seed):
        phi_hat = np.random.default_rng(seed).gamma(1.0, size=6) + 0.05
        div = fd_divergence(lambda x: np.linalg.inv(fisher_expanded(x)), phi_hat)
        np.testing.assert_allclose(gamma_expanded(phi_hat), div, rtol=1e-5)

    def test_reduced_inverse_metric_closed_form(self):
        psi = np.array([0.1, 0.25, 0.4])
        inv = np.linalg.inv(fisher_reduced(psi, 7.0))
        np.testing.assert_allclose(inv, (np.diag(psi) - np.outer(psi, psi)) / 7.0, atol=1e-14)


class TestMinibatch:
    def test_full_fraction_returns_everything(self):
        edges = np.arange(30).reshape(10, 3)
        batch, rho = draw_minibatch(edges, 1.0, RngStream(0))
        assert rho == 1.0 and np.array_equal(batch, edges)

    @pytest.mark.parametrize("E,fraction,size", [(10, 0.25, 3), (10, 0.1, 1), (7, 0.5, 4), (1, 0.01, 1)])
    def test_sizes(self, E, fraction, size):
        batch, rho = draw_minibatch(np.zeros((E, 3)), fraction, RngStream(0))
        assert len(batch) == size and rho == pytest.approx(E / size)

    def test_no_duplicates_and_sorted(self):
        edges = np.arange(100)[:, None] * np.ones((1, 3), dtype=int)
        batch, _ = draw_minibatch(edges, 0.3, RngStream(1))
        assert len(np.unique(batch[:, 0])) == len(batch)
        assert np.all(np.diff(batch[:, 0]) > 0)

    def test_every_edge_covered(self):
        edges = np.arange(20)[:, None] * np.ones((1, 3), dtype=int)
        rng = RngStream(2)
        seen = set()
        for _ in range(100):
            seen.update(draw_minibatch(edges, 0.25, rng)[0][:, 0].tolist())
        assert seen == set(range(20))

    def test_scaled_sum_is_unbiased(self):
        w = np.random.default_rng(3).exponential(size=13)
        edges = np.arange(13)[:, None] * np.ones((1, 3), dtype=int)
        rng = RngStream(3)
        reps = 20_000
        est = np.empty(reps)
        for r in range(reps):
            batch, rho = draw_minibatch(edges, 0.3, rng)
            est[r] = rho * w[batch[:, 0]].sum()
        assert abs(est.mean() - w.sum()) < 4 * est.std() / math.sqrt(reps)

    @pytest.mark.parametrize("fraction", [0.0, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(ValueError):
            draw_minibatch(np.zeros((4, 3)), fraction, RngStream(0))

    def test_empty(self):
        with pytest.raises(ValueError):
            draw_minibatch(np.zeros((0, 3)), 0.5, RngStream(0))


class TestSteps:
    def test_step_size_schedule(self):
        assert step_size(0, 10, 1000, 0.6) == pytest.approx(10 ** -0.6)
        assert step_size(1000, 10, 1000, 0.6) == pytest.approx(20 ** -0.6)
        assert step_size(5, 2, 1, 1.0) < step_size(4, 2, 1, 1.0)

    def test_zero_step_keeps_reduced_state(self):
        phi = np.random.default_rng(0).dirichlet(np.ones(5), size=3).T
        out = step_reduced(phi, np.ones((5, 3)), np.ones((5, 3)), 2.0, np.full(3, 10.0), 0.0, RngStream(0))
        np.testing.assert_allclose(out, phi, rtol=1e-15)

    def test_zero_step_keeps_expanded_state(self):
        phi_hat = np.random.default_rng(1).gamma(2.0, size=(5, 3))
        new, phi = step_expanded(phi_hat, np.ones((5, 3)), np.ones((5, 3)), 2.0, 0.0, RngStream(0))
        np.testing.assert_array_equal(new, phi_hat)
        np.testing.assert_allclose(phi, phi_hat / phi_hat.sum(axis=0))

    def test_mirror_identity_on_simplex(self):
        phi = np.random.default_rng(2).dirichlet(np.ones(4), size=2).T
        np.testing.assert_allclose(mirror(phi), phi, rtol=1e-15)

    def test_mirror_reflects(self):
        np.testing.assert_allclose(mirror(np.array([[-0.2], [0.6], [0.6]])), [[0.142857142857], [0.428571428571], [0.428571428571]])

    def test_mirror_zero_mass(self):
        with pytest.raises(FloatingPointError):
            mirror(np.zeros((3, 1)))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 8), st.integers(1, 4), st.integers(0, 2**32 - 1),
           st.floats(1e-4, 5.0), st.floats(1.0, 20.0))
    def test_steps_stay_on_simplex(self, N, K, seed, eps, rho):
        r = np.random.default_rng(seed)
        phi = r.dirichlet(np.full(N, 0.3), size=K).T
        m = r.poisson(3.0, size=(N, K)).astype(float)
        prior = r.gamma(0.5, size=(N, K)) + 1e-3
        rng = RngStream(seed)
        for out in (step_reduced(phi, m, prior, rho, np.full(K, 5.0), eps, rng),
                    step_expanded(phi * 3.0, m, prior, rho, eps, rng)[1]):
            assert np.all(out >= 0) and np.all(np.isfinite(out))
            np.testing.assert_allclose(out.sum(axis=0), 1.0, atol=1e-9)

    def test_ema_mass(self):
        first = ema_mass(None, np.array([0.2, 40.0]), 0.9)
        np.testing.assert_array_equal(first, [1.0, 40.0])
        np.testing.assert_allclose(ema_mass(first, np.array([11.0, 0.0]), 0.9), [2.0, 36.0])
        assert np.all(ema_mass(np.array([1.0]), np.array([0.0]), 0.5) == 1.0)


class TestLongRun:
    """With fixed counts and moderate shapes the chains target the Dirichlet posterior."""

    def setup_method(self):
        r = np.random.default_rng(0)
        self.m = r.multinomial(60, [0.4, 0.3, 0.2, 0.1])[:, None].astype(float)
        self.prior = np.array([[2.0], [1.5], [3.0], [2.5]])
        post = self.m + self.prior
        self.mean = post[:, 0] / post.sum()

    def test_reduced_mean(self):
        rng, phi = RngStream(1), np.full((4, 1), 0.25)
        M = np.array([self.m.sum()])
        acc = []
        for it in range(40_000):
            phi = step_reduced(phi, self.m, self.prior, 1.0, M, 0.05, rng)
            if it >= 2000:
                acc.append(phi[:, 0])
        np.testing.assert_allclose(np.mean(acc, axis=0), self.mean, atol=0.01)

    def test_expanded_mean(self):
        rng, phi_hat = RngStream(2), np.full((4, 1), 3.0)
        acc = []
        for it in range(40_000):
            phi_hat, phi = step_expanded(phi_hat, self.m, self.prior, 1.0, 0.01, rng)
            if it >= 2000:
                acc.append(phi[:, 0])
        np.testing.assert_allclose(np.mean(acc, axis=0), self.mean, atol=0.01)


@pytest.fixture(scope="module")
def small_graph():
    _, g = simulate(Hyperparams(K=2), 12, 3, RngStream(4), lam=np.array([20.0, 12.0]), eta=1.0)
    return g


class TestRun:
    @pytest.mark.parametrize("variant", ["expanded-mean", "reduced-mean"])
    def test_deterministic(self, small_graph, variant):
        cfg = SgmcmcConfig(variant, 40, 20)
        a = run_sgmcmc(small_graph, None, Hyperparams(K=5), cfg)
        b = run_sgmcmc(small_graph, None, Hyperparams(K=5), cfg)
        assert a[1] == b[1]
        assert np.array_equal(a[0].phi_mean, b[0].phi_mean)

    @pytest.mark.parametrize("variant", ["expanded-mean", "reduced-mean"])
    def test_stable(self, small_graph, variant):
        summ, trace = run_sgmcmc(small_graph, HeldOutMask.empty(12), Hyperparams(K=5),
                                 SgmcmcConfig(variant, 200, 100, seed=3))
        phi = summ.state.phi
        assert np.all(np.isfinite(phi)) and np.all(phi >= 0)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(np.isfinite(trace.column("eta")))
        assert summ.n_samples == 100

    def test_no_edges(self):
        from d2epm.graph import TemporalGraph
        g = TemporalGraph.from_cells(4, 2, [])
        with pytest.raises(ValueError):
            run_sgmcmc(g, None, Hyperparams(K=2), SgmcmcConfig())


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(variant="plain"), dict(iterations=0),
                                    dict(iterations=10, burn_in=10), dict(minibatch_fraction=0.0),
                                    dict(step_a=0.0), dict(step_c=0.4), dict(mk_ema_decay=1.0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SgmcmcConfig(**kw)

    def test_step_c_override(self):
        assert SgmcmcConfig(step_c=0.4, strict_step_c=False).step_c == 0.4

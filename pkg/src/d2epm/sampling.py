"""Seedable samplers for the distributions used by the inference code.

All samplers take a ``numpy.random.Generator`` (usually an :class:`RngStream`)
and are otherwise pure functions of their arguments. Gamma variates are
parameterized by shape and *scale* throughout.
"""
import numpy as np

__all__ = [
    "RngStream",
    "DIRICHLET_FLOOR",
    "sample_crt",
    "sample_logarithmic",
    "sample_sumlog",
    "sample_ztp",
    "sample_log_gamma",
    "sample_gamma",
    "sample_beta",
    "sample_log_beta",
    "sample_dirichlet",
    "sample_multinomial",
    "sample_poisson",
    "sample_nb",
]

DIRICHLET_FLOOR = 1e-12
_ZTP_INVERSION_MAX_RATE = 5.0


class RngStream(np.random.Generator):
    """PCG64 generator keyed by ``(seed, stream_id)``.

    Distinct stream ids give independent substreams of the same seed, which
    is how per-chain or per-worker randomness is derived.
    """

    def __init__(self, seed=0, stream_id=0):
        seed = int(seed)
        stream_id = int(stream_id)
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be nonnegative")
        ss = np.random.SeedSequence(seed, spawn_key=(stream_id,))
        super().__init__(np.random.PCG64(ss))
        self.seed = seed
        self.stream_id = stream_id

    def substream(self, stream_id):
        return RngStream(self.seed, stream_id)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def sample_crt(customers, concentration, rng):
    """Chinese restaurant table counts, vectorized over broadcast inputs.

    Each result is a sum of independent Bernoulli(r / (r + i - 1)) draws for
    i = 1..x. The first draw always succeeds, so a zero concentration is
    accepted as the r -> 0 limit (one table whenever x >= 1).
    """
    x, r = np.broadcast_arrays(np.asarray(customers), np.asarray(concentration, dtype=float))
    if np.any(x < 0):
        raise ValueError("CRT customer counts must be nonnegative")
    if np.any(~np.isfinite(r)) or np.any(r < 0):
        raise ValueError("CRT concentration must be finite and nonnegative")
    x = x.astype(np.int64).ravel()
    r = r.ravel()
    out_shape = np.broadcast_shapes(np.shape(customers), np.shape(concentration))
    total = int(x.sum())
    if total == 0:
        return np.zeros(out_shape, dtype=np.int64)
    cell = np.repeat(np.arange(x.size), x)
    starts = np.cumsum(x) - x
    seat = np.arange(total) - np.repeat(starts, x)  # i - 1
    rr = r[cell]
    with np.errstate(invalid="ignore", divide="ignore"):
        prob = np.where(seat == 0, 1.0, rr / (rr + seat))
    hits = rng.random(total) < prob
    counts = np.bincount(cell, weights=hits, minlength=x.size)
    return counts.astype(np.int64).reshape(out_shape)


def _check_open_prob(p):
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability must lie in (0, 1), got {p}")


def sample_logarithmic(p, rng, size=None):
    """Logarithmic (log-series) variates by CDF inversion.

    P(u = k) = -p**k / (k log(1 - p)), k >= 1.
    """
    p = float(p)
    _check_open_prob(p)
    u = rng.random(size)
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(u)
    out = np.ones(u.shape, dtype=np.int64)
    pk = -p / np.log1p(-p)
    cdf = np.full(u.shape, pk)
    active = np.flatnonzero(u > cdf)
    k = 1
    while active.size:
        k += 1
        pk *= p * (k - 1) / k
        if pk == 0.0:
            # remaining mass is below float resolution
            out[active] = k
            break
        cdf[active] += pk
        out[active] = k
        active = active[u[active] > cdf[active]]
    return int(out[0]) if scalar else out


def sample_sumlog(count, p, rng):
    """Sum of ``count`` independent logarithmic(p) draws (vectorized over count)."""
    p = float(p)
    _check_open_prob(p)
    l = np.asarray(count)
    if np.any(l < 0):
        raise ValueError("sum-logarithmic count must be nonnegative")
    flat = l.astype(np.int64).ravel()
    total = int(flat.sum())
    if total == 0:
        res = np.zeros(flat.shape, dtype=np.int64)
    else:
        draws = sample_logarithmic(p, rng, size=total)
        res = np.bincount(np.repeat(np.arange(flat.size), flat), weights=draws,
                          minlength=flat.size).astype(np.int64)
    return int(res[0]) if l.ndim == 0 else res.reshape(l.shape)


def sample_ztp(rate, rng):
    """Zero-truncated Poisson variates, vectorized over ``rate``.

    Inversion of the truncated PMF below rate 5, Poisson draws with zeros
    redrawn above it.
    """
    lam = np.asarray(rate, dtype=float)
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise ValueError("zero-truncated Poisson rate must be positive and finite")
    scalar = lam.ndim == 0
    lam = np.atleast_1d(lam).ravel()
    out = np.empty(lam.size, dtype=np.int64)

    small = np.flatnonzero(lam < _ZTP_INVERSION_MAX_RATE)
    if small.size:
        r = lam[small]
        u = rng.random(small.size)
        pk = r / np.expm1(r)  # P(m = 1 | m >= 1)
        cdf = pk.copy()
        res = np.ones(small.size, dtype=np.int64)
        active = np.flatnonzero(u > cdf)
        k = 1
        while active.size:
            k += 1
            pk[active] *= r[active] / k
            cdf[active] += pk[active]
            res[active] = k
            keep = (u[active] > cdf[active]) & (pk[active] > 0)
            active = active[keep]
        out[small] = res

    big = np.flatnonzero(lam >= _ZTP_INVERSION_MAX_RATE)
    if big.size:
        draws = rng.poisson(lam[big])
        zero = np.flatnonzero(draws == 0)
        while zero.size:
            draws[zero] = rng.poisson(lam[big][zero])
            zero = zero[draws[zero] == 0]
        out[big] = draws

    return int(out[0]) if scalar else out.reshape(np.shape(rate))


def sample_log_gamma(shape, rng):
    """Log of Gamma(shape, 1) draws without underflow for small shapes.

    Uses G(a) = G(a + 1) * U**(1/a) when a < 1.
    """
    a = np.asarray(shape, dtype=float)
    if np.any(~(a > 0)):
        raise ValueError("gamma shape must be positive")
    small = a < 1.0
    g = rng.gamma(np.where(small, a + 1.0, a))
    with np.errstate(divide="ignore"):
        out = np.log(g)
    if np.any(small):
        u = rng.random(a.shape)
        out = np.where(small, out + np.log(u) / np.where(small, a, 1.0), out)
    return out


def sample_gamma(shape, scale, rng, size=None):
    shape = np.asarray(shape, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(scale > 0)):
        raise ValueError("gamma shape and scale must be positive")
    return rng.gamma(shape, scale, size=size)


def sample_log_beta(a, b, rng):
    """Return ``(log x, log(1 - x))`` for x ~ Beta(a, b), computed in log space."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    la = sample_log_gamma(a, rng)
    lb = sample_log_gamma(b, rng)
    lse = np.logaddexp(la, lb)
    return la - lse, lb - lse


def sample_beta(a, b, rng):
    if np.any(~(np.asarray(a) > 0)) or np.any(~(np.asarray(b) > 0)):
        raise ValueError("beta parameters must be positive")
    lx, _ = sample_log_beta(a, b, rng)
    x = np.exp(lx)
    return float(x) if x.ndim == 0 else x


def sample_dirichlet(alphas, rng, axis=-1):
    """Dirichlet draws along ``axis`` via normalized gamma variates.

    Parameters below ``DIRICHLET_FLOOR`` are raised to it first; a vector
    that is identically zero is rejected.
    """
    alphas = np.asarray(alphas, dtype=float)
    if np.any(alphas < 0) or np.any(~np.isfinite(alphas)):
        raise ValueError("Dirichlet parameters must be finite and nonnegative")
    if np.any(np.all(alphas == 0, axis=axis)):
        raise ValueError("Dirichlet parameter vector is all zero")
    a = np.maximum(alphas, DIRICHLET_FLOOR)
    lg = sample_log_gamma(a, rng)
    lg -= lg.max(axis=axis, keepdims=True)
    w = np.exp(lg)
    return w / w.sum(axis=axis, keepdims=True)


def sample_multinomial(total, probs, rng):
    """Multinomial counts; ``probs`` is normalized along its last axis."""
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or np.any(~np.isfinite(probs)):
        raise ValueError("multinomial probabilities must be nonnegative")
    s = probs.sum(axis=-1, keepdims=True)
    if np.any(s <= 0):
        raise ValueError("multinomial probabilities sum to zero")
    total = np.asarray(total)
    if np.any(total < 0):
        raise ValueError("multinomial total must be nonnegative")
    return rng.multinomial(total.astype(np.int64), probs / s)


def sample_poisson(lam, rng, size=None):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or np.any(~np.isfinite(lam)):
        raise ValueError("Poisson rate must be finite and nonnegative")
    return rng.poisson(lam, size=size)


def sample_nb(r, p, rng, size=None):
    """Negative binomial with mean r p / (1 - p), drawn as a gamma-Poisson mixture."""
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    if np.any(~(r > 0)):
        raise ValueError("negative binomial r must be positive")
    if np.any(p < 0) or np.any(p >= 1):
        raise ValueError("negative binomial p must lie in [0, 1)")
    scale = p / (1.0 - p)
    rate = np.where(scale > 0, rng.gamma(r, np.where(scale > 0, scale, 1.0), size=size), 0.0)
    return rng.poisson(rate)

"""Special functions, seeded samplers and reparameterization gradients.

All randomness flows through :class:`BaseNoise`, a (seed, stream id) pair
that deterministically names a Philox stream. Two calls with equal noise
produce bit-identical draws regardless of what else was sampled in between.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy import special

from .errors import DomainError, NumericalError, ShapeError
from .numkernel import softmax_rows, softmax_rows_backward

CONCENTRATION_FLOOR = 1e-6
_UNIFORM_FLOOR = 1e-300


@dataclass(frozen=True)
class BaseNoise:
    """Names one independent random stream.

    ``stream`` is conventionally ``(epoch, batch, draw)`` but any tuple of
    non-negative ints works.
    """

    seed: int
    stream: tuple = (0, 0, 0)

    def generator(self):
        ss = np.random.SeedSequence(int(self.seed), spawn_key=tuple(int(s) for s in self.stream))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, draw):
        """Same stream prefix, different last component."""
        return replace(self, stream=tuple(self.stream[:-1]) + (int(draw),))

    def uniform(self, size):
        u = self.generator().random(size)
        return np.clip(u, _UNIFORM_FLOOR, 1.0)


def _check_positive(x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError(f"{name} must be strictly positive")
    return x


def lgamma(x):
    """log|Gamma(x)| for x > 0."""
    x = _check_positive(x)
    return special.gammaln(x)


def digamma(x):
    x = _check_positive(x)
    return special.digamma(x)


def trigamma(x):
    x = _check_positive(x)
    return special.polygamma(1, x)


# -- Gumbel-Softmax -------------------------------------------------------

def gumbel_noise(shape, noise):
    u = noise.uniform(shape)
    u = np.minimum(u, np.nextafter(1.0, 0.0))
    return -np.log(-np.log(u))


def gumbel_softmax_sample(logits, temperature, noise):
    """Relaxed one-hot sample ``softmax((logits + g) / temperature)``.

    ``logits`` may be a K-vector or an (n, K) array; one Gumbel vector is
    drawn per row.
    """
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    logits = np.asarray(logits, dtype=np.float64)
    g = gumbel_noise(logits.shape, noise)
    return softmax_rows(logits + g, temperature)


def gumbel_softmax_backward(grad_mu, mu, temperature):
    """Pathwise gradients ``(d_logits, d_temperature)`` for fixed noise."""
    d_logits = softmax_rows_backward(grad_mu, mu, temperature)
    # logits + g equals temperature * log(mu) up to a per-row constant, and the
    # constant drops out because d_logits sums to zero along each row
    with np.errstate(divide="ignore"):
        logmu = np.log(np.maximum(mu, np.finfo(float).tiny))
    d_temperature = -np.sum(d_logits * logmu)
    return d_logits, d_temperature


# -- Gamma / Dirichlet ------------------------------------------------------

def _log_gamma_draws(shape, rng):
    """log of Gamma(shape, 1) draws, Marsaglia-Tsang with the shape < 1 boost.

    Works in log space so that draws for tiny shapes do not underflow.
    """
    a = np.asarray(shape, dtype=np.float64).reshape(-1)
    boost = a < 1.0
    a_eff = np.where(boost, a + 1.0, a)
    d = a_eff - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(a)
    pending = np.arange(a.size)
    while pending.size:
        x = rng.standard_normal(pending.size)
        u = rng.random(pending.size)
        dp, cp = d[pending], c[pending]
        v = (1.0 + cp * x) ** 3
        ok = v > 0
        accept = np.zeros(pending.size, dtype=bool)
        squeeze = u < 1.0 - 0.0331 * x ** 4
        accept[ok & squeeze] = True
        rest = ok & ~squeeze
        if np.any(rest):
            with np.errstate(divide="ignore"):
                lu = np.log(u[rest])
            xr, vr = x[rest], v[rest]
            accept[rest] = lu < 0.5 * xr ** 2 + dp[rest] * (1.0 - vr + np.log(vr))
        hit = pending[accept]
        out[hit] = np.log(dp[accept] * v[accept])
        pending = pending[~accept]
    if np.any(boost):
        ub = np.clip(rng.random(a.size), _UNIFORM_FLOOR, 1.0)
        out = np.where(boost, out + np.log(ub) / a, out)
    return out.reshape(np.shape(shape))


def gamma_sample(shape, noise):
    """Gamma(shape, 1) draws; ``shape`` may be a scalar or an array."""
    shape = _check_positive(shape, "shape")
    return np.exp(_log_gamma_draws(shape, noise.generator()))


def dirichlet_sample(concentration, noise, return_log_gamma=False, method="rejection"):
    """Draw from Dirichlet(concentration) along the last axis.

    The concentration is floored at ``CONCENTRATION_FLOOR``. With
    ``return_log_gamma`` the log of the unnormalized Gamma draws is returned
    too; :func:`dirichlet_implicit_grad` needs it.

    ``method="inverse_cdf"`` inverts the Gamma CDF at one uniform per
    component instead of rejection sampling. The draw is then a smooth
    function of the concentration for fixed noise, which is what finite
    difference checks of the implicit gradient need.
    """
    conc = np.asarray(concentration, dtype=np.float64)
    if np.any(~np.isfinite(conc)) or np.any(conc <= 0):
        raise DomainError("Dirichlet concentration must be positive and finite")
    conc = np.maximum(conc, CONCENTRATION_FLOOR)
    if method == "rejection":
        log_g = _log_gamma_draws(conc, noise.generator())
    elif method == "inverse_cdf":
        u = np.minimum(noise.uniform(conc.shape), np.nextafter(1.0, 0.0))
        with np.errstate(divide="ignore"):
            log_g = np.log(special.gammaincinv(conc, u))
        if not np.all(np.isfinite(log_g)):
            raise NumericalError("Gamma inverse CDF underflowed")
    else:
        raise ValueError(f"unknown method {method!r}")
    m = log_g.max(axis=-1, keepdims=True)
    e = np.exp(log_g - m)
    theta = e / e.sum(axis=-1, keepdims=True)
    if return_log_gamma:
        return theta, log_g
    return theta


def _gammainc_shape_derivative(a, x):
    """d/da of the regularized lower incomplete gamma P(a, x), by central
    differences with step ``1e-4 * max(1, a)`` (capped at ``a / 100``)."""
    h = np.minimum(1e-4 * np.maximum(1.0, a), 1e-2 * a)
    p = special.gammainc(a, x)
    lower = p <= 0.5
    dp_lower = (special.gammainc(a + h, x) - special.gammainc(a - h, x)) / (2 * h)
    dq_upper = (special.gammaincc(a + h, x) - special.gammaincc(a - h, x)) / (2 * h)
    return np.where(lower, dp_lower, -dq_upper)


def gamma_log_sample_shape_grad(shape, log_gamma):
    """d log(gamma) / d shape at a fixed CDF value (implicit reparameterization).

    Uses ``dgamma/da = -(dP/da) / p(gamma; a)`` where ``p`` is the Gamma
    density. For draws below ``exp(-30)`` the small-x limit
    ``-(log gamma - digamma(a + 1)) / a`` is used instead; it is accurate to
    O(gamma) there and avoids underflow.
    """
    a = np.asarray(shape, dtype=np.float64)
    lg = np.asarray(log_gamma, dtype=np.float64)
    tiny = lg < -30.0
    a_b, lg_b = np.broadcast_arrays(a, lg)
    out = np.empty(lg_b.shape)
    out[tiny] = -(lg_b[tiny] - special.digamma(a_b[tiny] + 1.0)) / a_b[tiny]
    big = ~tiny
    if np.any(big):
        aa, ll = a_b[big], lg_b[big]
        x = np.exp(ll)
        dpda = _gammainc_shape_derivative(aa, x)
        # density times x, in log space: x^a e^-x / Gamma(a)
        log_px = aa * ll - x - special.gammaln(aa)
        out[big] = -dpda * np.exp(-log_px)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite implicit reparameterization gradient")
    return out


def dirichlet_implicit_grad(concentration, theta, upstream, log_gamma):
    """Pathwise gradient dL/d(concentration) of a Dirichlet sample.

    ``theta`` and ``log_gamma`` come from ``dirichlet_sample(...,
    return_log_gamma=True)``; ``upstream`` is dL/dtheta. Each Gamma component
    is differentiated implicitly, then chained through theta = g / sum(g):
    dtheta_t/da_j = (delta_tj - theta_t) * theta_j * dlog(g_j)/da_j.
    """
    conc = np.maximum(np.asarray(concentration, dtype=np.float64), CONCENTRATION_FLOOR)
    theta = np.asarray(theta, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if theta.shape != upstream.shape or theta.shape != np.shape(log_gamma):
        raise ShapeError("theta, log_gamma and upstream must share a shape")
    dlog = gamma_log_sample_shape_grad(conc, log_gamma)
    inner = np.sum(upstream * theta, axis=-1, keepdims=True)
    return (upstream - inner) * theta * dlog


def kl_dirichlet(q, p):
    """KL(Dir(q) || Dir(p)) along the last axis (broadcasting)."""
    q = _check_positive(q, "q")
    p = _check_positive(p, "p")
    if q.shape[-1] != p.shape[-1]:
        raise ShapeError(f"dimension mismatch: {q.shape[-1]} vs {p.shape[-1]}")
    q0 = q.sum(axis=-1)
    p0 = p.sum(axis=-1)
    return (
        special.gammaln(q0)
        - special.gammaln(q).sum(axis=-1)
        - special.gammaln(p0)
        + special.gammaln(p).sum(axis=-1)
        + ((q - p) * (special.digamma(q) - special.digamma(q0)[..., None])).sum(axis=-1)
    )


def kl_dirichlet_grad(q, p):
    """Gradients ``(dKL/dq, dKL/dp)`` of :func:`kl_dirichlet` (elementwise
    over leading axes)."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    q0 = q.sum(axis=-1, keepdims=True)
    p0 = p.sum(axis=-1, keepdims=True)
    dq = (q - p) * special.polygamma(1, q) - (q0 - p0) * special.polygamma(1, q0)
    dp = special.digamma(p) - special.digamma(p0) - special.digamma(q) + special.digamma(q0)
    return dq, dp


def dirichlet_log_pdf(theta, conc):
    theta = np.asarray(theta, dtype=np.float64)
    conc = np.asarray(conc, dtype=np.float64)
    return (
        special.gammaln(conc.sum(axis=-1))
        - special.gammaln(conc).sum(axis=-1)
        + ((conc - 1.0) * np.log(theta)).sum(axis=-1)
    )

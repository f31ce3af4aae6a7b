"""Dense float64 kernels with hand-written backward rules.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64. Every
forward op below has a ``*_backward`` companion; :func:`grad_check` compares
them with central finite differences.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBatchError, DomainError, NumericalError, ShapeError


def as_matrix(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {x.shape}")
    return x


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(grad_out, a, b):
    """Return ``(grad_a, grad_b)`` for ``out = a @ b``."""
    return grad_out @ b.T, a.T @ grad_out


def softmax_rows(x, temperature=1.0):
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = np.asarray(x, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(x, temperature=1.0):
    if not temperature > 0:
        raise DomainError(f"temperature must be positive, got {temperature}")
    z = np.asarray(x, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_rows_backward(grad_out, y, temperature=1.0):
    """Gradient w.r.t. the logits given the softmax output ``y``."""
    inner = (grad_out * y).sum(axis=-1, keepdims=True)
    return y * (grad_out - inner) / temperature


def log_softmax_rows_backward(grad_out, y, temperature=1.0):
    """Gradient w.r.t. the logits of ``log_softmax_rows``; ``y`` is the softmax."""
    return (grad_out - y * grad_out.sum(axis=-1, keepdims=True)) / temperature


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, x)


def softplus_backward(grad_out, x):
    # d softplus / dx = sigmoid(x)
    return grad_out * _sigmoid(np.asarray(x, dtype=np.float64))


def inverse_softplus(y):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise DomainError("inverse softplus requires positive input")
    return y + np.log(-np.expm1(-y))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


@dataclass
class BatchNormState:
    """Per-feature affine parameters and running statistics.

    ``running_*`` are updated as ``momentum * running + (1 - momentum) * batch``.
    """

    gamma: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-5

    @classmethod
    def create(cls, n_features, momentum=0.99, eps=1e-5):
        if eps <= 0:
            raise DomainError("eps must be positive")
        return cls(
            gamma=np.ones(n_features),
            shift=np.zeros(n_features),
            running_mean=np.zeros(n_features),
            running_var=np.ones(n_features),
            momentum=momentum,
            eps=eps,
        )

    @property
    def n_features(self):
        return self.gamma.shape[0]


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    batch_stats: bool = field(default=True)


def batchnorm_forward(x, state, mode="train", update_running=True):
    """Normalize each column of ``x``.

    ``mode="train"`` uses the batch's biased statistics and (optionally)
    updates the running averages; ``mode="infer"`` uses the running averages.
    Returns ``(y, cache)``.
    """
    x = as_matrix(x)
    if x.shape[1] != state.n_features:
        raise ShapeError(f"expected {state.n_features} features, got {x.shape[1]}")
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError("batch normalization needs at least 2 rows in train mode")
        mean = x.mean(axis=0)
        var = ((x - mean) ** 2).mean(axis=0)
        if update_running:
            m = state.momentum
            state.running_mean = m * state.running_mean + (1.0 - m) * mean
            state.running_var = m * state.running_var + (1.0 - m) * var
    elif mode == "infer":
        mean = state.running_mean
        var = state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean) * inv_std
    y = state.gamma * xhat + state.shift
    return y, BatchNormCache(xhat=xhat, inv_std=inv_std, gamma=state.gamma.copy(),
                             batch_stats=(mode == "train"))


def batchnorm_backward(grad_out, cache):
    """Return ``(grad_x, grad_gamma, grad_shift)``."""
    dgamma = (grad_out * cache.xhat).sum(axis=0)
    dshift = grad_out.sum(axis=0)
    dxhat = grad_out * cache.gamma
    if not cache.batch_stats:
        return dxhat * cache.inv_std, dgamma, dshift
    n = grad_out.shape[0]
    dx = (cache.inv_std / n) * (
        n * dxhat - dxhat.sum(axis=0) - cache.xhat * (dxhat * cache.xhat).sum(axis=0)
    )
    return dx, dgamma, dshift


def grad_check(f, params, step=1e-5, value_fn=None):
    """Compare analytic gradients with central differences.

    ``f(params)`` must return ``(value, grads)`` where ``grads`` matches
    ``params`` array by array. Each array in ``params`` is perturbed in place
    and restored. ``value_fn``, when given, computes the value alone and is
    used for the perturbed evaluations.

    Returns the largest relative error over the arrays, where the error of
    one array is ``|analytic - central| / max(|analytic|, |central|, 1e-12)``
    measured in the Euclidean norm.
    """
    value, analytic = f(params)
    if value_fn is None:
        def value_fn(ps):
            return f(ps)[0]
    if not np.isfinite(value):
        raise NumericalError(f"function value is not finite: {value}")
    worst = 0.0
    for p, g in zip(params, analytic):
        central = np.zeros_like(p, dtype=np.float64)
        flat = p.reshape(-1)
        cflat = central.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = value_fn(params)
            flat[i] = orig - step
            down = value_fn(params)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError("function value is not finite during differencing")
            cflat[i] = (up - down) / (2.0 * step)
        g = np.asarray(g, dtype=np.float64)
        num = np.linalg.norm(g - central)
        den = max(np.linalg.norm(g), np.linalg.norm(central), 1e-12)
        worst = max(worst, num / den)
    return worst

"""Signal prior, Bayesian denoiser and scalar-channel helpers.

The scalar channel is ``f = x + w`` with ``w ~ N(0, s)``.  Everything here is
vectorized over ``f`` and pure, so it can be called from any thread.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import DomainError

__all__ = [
    "PriorKind",
    "Prior",
    "ScalarChannelParams",
    "denoise",
    "denoise_derivative",
    "posterior_variance",
    "spike_probability",
    "sample_signal",
]


class PriorKind(enum.Enum):
    BERNOULLI_GAUSSIAN = "bernoulli_gaussian"


@dataclass(frozen=True)
class Prior:
    """Bernoulli-Gaussian prior ``eps * N(0, a) + (1 - eps) * delta_0``."""

    epsilon: float
    active_variance: float = 1.0
    kind: PriorKind = PriorKind.BERNOULLI_GAUSSIAN

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise DomainError(f"sparsity rate must lie in (0, 1), got {self.epsilon}")
        if not self.active_variance > 0.0 or not math.isfinite(self.active_variance):
            raise DomainError(f"active_variance must be positive, got {self.active_variance}")

    def second_moment(self) -> float:
        return self.epsilon * self.active_variance


@dataclass(frozen=True)
class ScalarChannelParams:
    noise_variance: float

    def __post_init__(self):
        if not self.noise_variance >= 0.0:
            raise DomainError(f"noise variance must be >= 0, got {self.noise_variance}")


def _check(f, s):
    f = np.asarray(f, dtype=float)
    if not (np.isfinite(s) and s > 0):
        raise DomainError(f"effective noise variance must be finite and > 0, got {s}")
    if not np.all(np.isfinite(f)):
        raise DomainError("denoiser input contains non-finite values")
    return f


def _log_odds(f, prior, s):
    # log of eps*N(f;0,a+s) / ((1-eps)*N(f;0,s)), kept in log space so that
    # large |f| does not underflow both densities to zero.
    a = prior.active_variance
    eps = prior.epsilon
    return (
        math.log(eps) - math.log1p(-eps)
        + 0.5 * math.log(s / (a + s))
        + 0.5 * f * f * a / (s * (a + s))
    )


def spike_probability(f, prior: Prior, s: float):
    """Posterior probability that the entry came from the Gaussian component."""
    f = _check(f, s)
    if prior.kind is not PriorKind.BERNOULLI_GAUSSIAN:
        raise DomainError(f"unsupported prior {prior.kind}")
    return expit(_log_odds(f, prior, s))


def denoise(f, prior: Prior, s: float):
    """Conditional mean ``E[X | X + W = f]`` for ``W ~ N(0, s)``."""
    m = spike_probability(f, prior, s)
    gain = prior.active_variance / (prior.active_variance + s)
    return m * gain * np.asarray(f, dtype=float)


def denoise_derivative(f, prior: Prior, s: float):
    """Derivative of :func:`denoise` with respect to ``f``."""
    f = np.asarray(f, dtype=float)
    m = spike_probability(f, prior, s)
    a = prior.active_variance
    gain = a / (a + s)
    # m' = m (1 - m) * d(log-odds)/df and d(log-odds)/df = f a / (s (a + s))
    return gain * m * (1.0 + (1.0 - m) * f * f * a / (s * (a + s)))


def posterior_variance(f, prior: Prior, s: float):
    """``Var[X | X + W = f]``; its average over ``f`` is the Bayes MSE."""
    f = np.asarray(f, dtype=float)
    m = spike_probability(f, prior, s)
    a = prior.active_variance
    mean_active = f * a / (a + s)
    var_active = a * s / (a + s)
    return m * var_active + m * (1.0 - m) * mean_active**2


def sample_signal(prior: Prior, n: int, seed) -> np.ndarray:
    """Draw ``n`` i.i.d. entries from ``prior``; deterministic in ``seed``."""
    if n < 1:
        raise DomainError(f"need at least one sample, got n={n}")
    rng = np.random.default_rng(seed)
    support = rng.random(n) < prior.epsilon
    return np.where(support, rng.standard_normal(n) * math.sqrt(prior.active_variance), 0.0)

"""Rate-distortion models for the per-node messages.

Two models map a coding rate (bits per component) to the per-node squared
error distortion:

* ``GaussianRd`` - ``D(R) = v * 2**(-2R)``, the Gaussian distortion-rate law.
  For any source of variance ``v`` this upper-bounds the optimal distortion.
* ``BlahutArimotoRd`` - the distortion-rate curve of the actual (discretized)
  mixture marginal of ``f_t^p``, computed with Blahut-Arimoto.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConvergenceError, DomainError

__all__ = [
    "RdKind",
    "RdPoint",
    "DiscreteSource",
    "GaussianRd",
    "BlahutArimotoRd",
    "GAUSSIAN",
    "per_node_source_variance",
    "gaussian_rate_to_distortion",
    "gaussian_distortion_to_rate",
    "blahut_arimoto",
    "rd_sweep",
    "rate_at_distortion",
    "discretize_gaussian",
    "discretize_mixture",
    "node_marginal",
]

LOG2E = 1.0 / math.log(2.0)


class RdKind(enum.Enum):
    GAUSSIAN_CLOSED_FORM = "gaussian"
    BLAHUT_ARIMOTO = "blahut_arimoto"


@dataclass(frozen=True)
class RdPoint:
    rate: float
    distortion: float
    slope: float = math.nan
    iterations: int = 0


def per_node_source_variance(sigma_sq, params) -> float:
    """Per-entry variance of ``f_t^p = x/P + (A^p)^T r_t^p``.

    Each node holds ``M/P`` i.i.d. rows, so its share of the channel noise
    has variance ``sigma_sq / P`` on top of the scaled signal ``x / P``.
    """
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    if np.any(sigma_sq <= 0):
        raise DomainError("sigma_sq must be > 0")
    P = params.P
    v = params.prior.second_moment() / P**2 + sigma_sq / P
    return float(v) if v.ndim == 0 else v


def gaussian_rate_to_distortion(rate, variance):
    rate = np.asarray(rate, dtype=float)
    if np.any(rate < 0):
        raise DomainError("rate must be >= 0")
    if np.any(np.asarray(variance) <= 0):
        raise DomainError("source variance must be > 0")
    d = variance * np.exp2(-2.0 * rate)
    return float(d) if np.ndim(d) == 0 else d


def gaussian_distortion_to_rate(distortion, variance):
    distortion = np.asarray(distortion, dtype=float)
    if np.any(distortion <= 0):
        raise DomainError("distortion must be > 0")
    r = np.maximum(0.0, 0.5 * np.log2(variance / distortion))
    return float(r) if np.ndim(r) == 0 else r


@dataclass(frozen=True)
class DiscreteSource:
    """Finite-support source: support ``points`` with probabilities ``pmf``."""

    points: np.ndarray
    pmf: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        pmf = np.asarray(self.pmf, dtype=float)
        if pts.shape != pmf.shape or pts.ndim != 1:
            raise DomainError("points and pmf must be 1-D arrays of equal length")
        if not np.all(np.isfinite(pts)):
            raise DomainError("source points must be finite")
        if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
            raise DomainError(f"pmf must be nonnegative and sum to 1 (sum={pmf.sum()!r})")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "pmf", pmf)

    @property
    def mean(self):
        return float(self.pmf @ self.points)

    @property
    def variance(self):
        return float(self.pmf @ (self.points - self.mean) ** 2)


def _normalize(w):
    w = np.asarray(w, dtype=float)
    return w / w.sum()


def discretize_gaussian(variance=1.0, n=1001, half_width=6.0):
    """N(0, variance) on ``n`` equispaced points over +-half_width std devs."""
    sd = math.sqrt(variance)
    pts = np.linspace(-half_width * sd, half_width * sd, n)
    return DiscreteSource(pts, _normalize(np.exp(-0.5 * (pts / sd) ** 2)))


def discretize_mixture(weights, variances, n=2001, half_width=8.0):
    """Zero-mean Gaussian mixture (a zero variance is a point mass at 0)."""
    sd = math.sqrt(sum(w * v for w, v in zip(weights, variances)))
    pts = np.linspace(-half_width * sd, half_width * sd, n)
    if n % 2 == 0:
        raise DomainError("use an odd number of points so 0 is on the grid")
    pmf = np.zeros(n)
    for w, v in zip(weights, variances):
        if v == 0:
            pmf[n // 2] += w
        else:
            comp = np.exp(-0.5 * pts**2 / v)
            pmf += w * comp / comp.sum()
    return DiscreteSource(pts, _normalize(pmf))


def node_marginal(sigma_sq, params, n=2001, half_width=8.0):
    """Discretized marginal of ``f_t^p``: ``x/P`` plus N(0, sigma_sq/P)."""
    P, prior = params.P, params.prior
    noise = sigma_sq / P
    return discretize_mixture(
        [1 - prior.epsilon, prior.epsilon],
        [noise, prior.active_variance / P**2 + noise],
        n=n,
        half_width=half_width,
    )


def blahut_arimoto(source: DiscreteSource, slope: float, tol: float = 1e-9, max_iter: int = 20000,
                   reproduction=None) -> RdPoint:
    """One point of R(D) for squared error via Blahut-Arimoto.

    ``slope`` is the Lagrange multiplier ``beta`` in ``exp(-beta * d)``
    (units 1/distortion, natural log).  Larger slope means smaller
    distortion.  Rate is returned in bits.
    """
    return _ba(source, slope, tol, max_iter, reproduction)[0]


def _ba(source, slope, tol, max_iter, reproduction=None, init=None):
    # returns the point and the converged output marginal, for warm starts
    if not slope > 0:
        raise DomainError(f"slope parameter must be > 0, got {slope}")
    keep = source.pmf > 0
    xs, px = source.points[keep], source.pmf[keep]
    if xs.size == 1:
        return RdPoint(0.0, 0.0, slope, 0), None
    ys = xs if reproduction is None else np.asarray(reproduction, dtype=float)
    dist = (xs[:, None] - ys[None, :]) ** 2
    logk = -slope * dist
    logq = np.full(ys.size, -math.log(ys.size)) if init is None else np.log(np.maximum(init, 1e-300))
    logpx = np.log(px)
    prev = math.inf
    for it in range(1, max_iter + 1):
        # conditional Q(y|x) proportional to q(y) exp(-beta d(x,y))
        logcond = logq[None, :] + logk
        logcond -= logsumexp(logcond, axis=1, keepdims=True)
        logq = logsumexp(logpx[:, None] + logcond, axis=0)
        cond = np.exp(logcond)
        joint = px[:, None] * cond
        D = float(np.sum(joint * dist))
        R = float(np.sum(joint * (logcond - logq[None, :]))) * LOG2E
        if abs(R - prev) < tol:
            break
        prev = R
    else:
        raise ConvergenceError(f"Blahut-Arimoto did not converge in {max_iter} iterations (slope={slope})")
    return RdPoint(max(R, 0.0), D, slope, it), np.exp(logq)


def rd_sweep(source: DiscreteSource, slopes, tol=1e-9, max_iter=20000):
    """Trace R(D) by sweeping the slope parameter in ascending order (warm starts)."""
    out = []
    q = None
    for s in sorted(slopes):
        point, q = _ba(source, s, tol, max_iter, init=q)
        out.append(point)
    return out


def rate_at_distortion(source: DiscreteSource, target: float, rtol=1e-3, tol=1e-10, max_iter=50000):
    """R(target) for ``source``, solving for the slope by bisection in log space.

    Starts from the Gaussian relation ``beta = 1 / (2 D)``.
    """
    if not 0 < target < source.variance:
        raise DomainError("target distortion must lie in (0, variance)")

    def solve(beta, q):
        return _ba(source, beta, tol, max_iter, init=q)

    lo, hi = None, None
    beta = 0.5 / target
    q = None
    for _ in range(200):
        point, q = solve(beta, q)
        if abs(point.distortion - target) <= rtol * target:
            return point
        if point.distortion > target:
            lo = beta
        else:
            hi = beta
        beta = math.sqrt(lo * hi) if lo and hi else (beta * 2 if hi is None else beta / 2)
    raise ConvergenceError(f"could not bracket distortion {target}")


class GaussianRd:
    """``D = v * 2**(-2R)`` evaluated at the per-node source variance."""

    kind = RdKind.GAUSSIAN_CLOSED_FORM

    def distortion(self, rate, variance, params=None, sigma_sq=None):
        return gaussian_rate_to_distortion(rate, variance)

    def __repr__(self):
        return "GaussianRd()"


GAUSSIAN = GaussianRd()


class BlahutArimotoRd:
    """Distortion-rate model from Blahut-Arimoto runs on the discretized node marginal.

    Curves are traced at anchor states spaced ``per_decade`` per decade of
    ``sigma_sq`` and cached.  Each curve is stored as the log-ratio of its
    distortion to the Gaussian ``v 2^(-2R)``; between anchors that ratio is
    interpolated linearly in ``log sigma_sq``.  Past the last traced rate
    the ratio is held, i.e. the curve continues with the high-resolution
    slope of -2 in ``log2 D`` per bit (the alphabet cannot resolve finer
    distortions anyway).
    """

    kind = RdKind.BLAHUT_ARIMOTO

    def __init__(self, n=201, half_width=8.0, n_slopes=10, max_slope=100.0, per_decade=6, tol=1e-7,
                 max_iter=200_000):
        self.n, self.half_width, self.n_slopes = n, half_width, n_slopes
        self.max_slope, self.per_decade = max_slope, per_decade
        self.tol, self.max_iter = tol, max_iter

    def _key(self):
        return (self.n, self.half_width, self.n_slopes, self.max_slope, self.per_decade, self.tol, self.max_iter)

    def curve(self, sigma_sq, params):
        """Traced ``(rates, log_ratio)`` at exactly ``sigma_sq``."""
        return self._curve(round(float(sigma_sq), 12), params)

    @functools.lru_cache(maxsize=1024)
    def _curve(self, sigma_sq, params):
        src = node_marginal(sigma_sq, params, self.n, self.half_width)
        v = src.variance
        slopes = np.geomspace(0.6 / v, self.max_slope / v, self.n_slopes)
        pts = rd_sweep(src, slopes, tol=self.tol, max_iter=self.max_iter)
        rates = np.array([0.0] + [p.rate for p in pts])
        dist = np.array([v] + [p.distortion for p in pts])
        order = np.argsort(rates, kind="stable")
        rates, dist = rates[order], dist[order]
        return rates, np.log(dist / (v * np.exp2(-2 * rates)))

    def log_ratio(self, rate, sigma_sq, params):
        u = math.log10(sigma_sq) * self.per_decade
        k0 = math.floor(u)
        w = u - k0
        out = 0.0
        for k, wk in ((k0, 1.0 - w), (k0 + 1, w)):
            if wk == 0.0:
                continue
            rates, lr = self._curve(round(10.0 ** (k / self.per_decade), 12), params)
            out = out + wk * np.interp(rate, rates, lr)
        return out

    def distortion(self, rate, variance=None, params=None, sigma_sq=None):
        if params is None or sigma_sq is None:
            raise DomainError("Blahut-Arimoto model needs params and sigma_sq")
        rate = np.asarray(rate, dtype=float)
        if np.any(rate < 0):
            raise DomainError("rate must be >= 0")
        v = per_node_source_variance(sigma_sq, params) if variance is None else variance
        out = gaussian_rate_to_distortion(rate, v) * np.exp(self.log_ratio(rate, sigma_sq, params))
        out = np.asarray(out, dtype=float)
        return float(out) if out.ndim == 0 else out

    def __hash__(self):
        return hash(self._key())

    def __eq__(self, other):
        return isinstance(other, BlahutArimotoRd) and self._key() == other._key()

    def __repr__(self):
        return f"BlahutArimotoRd(n={self.n}, half_width={self.half_width}, per_decade={self.per_decade})"


def make_rd_model(name: str):
    if name in ("gaussian", RdKind.GAUSSIAN_CLOSED_FORM):
        return GAUSSIAN
    if name in ("blahut_arimoto", RdKind.BLAHUT_ARIMOTO):
        return BlahutArimotoRd()
    raise DomainError(f"unknown rd model {name!r}")

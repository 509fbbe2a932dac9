"""State evolution for centralized AMP and lossy MP-AMP.

The recursion tracks the scalar-channel noise variance

    sigma2[t+1] = sigma_z2 + mse(sigma2[t] + P * D[t]) / kappa

where ``mse`` is the Bayes risk of the conditional-mean denoiser and ``D[t]``
the per-node quantization distortion at iteration ``t``.
"""
from __future__ import annotations

import functools
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .errors import ConvergenceError, DomainError, NumericalError
from .model import Prior, posterior_variance

__all__ = [
    "ProblemParams",
    "StateTrajectory",
    "mse_of_denoiser",
    "mse_curve",
    "se_step",
    "se_trajectory",
    "lossless_trajectory",
    "mmse",
    "fixed_point",
]

QUAD_TOL = 1e-10


@dataclass(frozen=True)
class ProblemParams:
    prior: Prior
    kappa: float
    sigma_z2: float
    P: int = 1

    def __post_init__(self):
        if not self.kappa > 0:
            raise DomainError(f"measurement rate kappa must be > 0, got {self.kappa}")
        if not self.sigma_z2 >= 0:
            raise DomainError(f"noise variance must be >= 0, got {self.sigma_z2}")
        if int(self.P) != self.P or self.P < 1:
            raise DomainError(f"node count P must be a positive integer, got {self.P}")

    @property
    def sigma1_sq(self) -> float:
        """Initial noise variance; the all-zero first estimate has MSE E[X^2]."""
        return self.sigma_z2 + self.prior.second_moment() / self.kappa


@dataclass
class StateTrajectory:
    """SE prediction for one coding-rate schedule.

    ``sigma_sq`` has ``T + 1`` entries; the per-iteration lists have ``T``.
    ``mse[t]`` is the post-denoising MSE of iteration ``t + 1`` and
    ``effective_sq[t] = sigma_sq[t] + P * distortion[t]`` the variance the
    denoiser sees.
    """

    sigma_sq: list
    distortion: list
    mse: list
    emse: list
    effective_sq: list = field(default_factory=list)
    mmse: float = 0.0

    @property
    def final_mse(self) -> float:
        return self.mse[-1]

    def __len__(self):
        return len(self.mse)


# --------------------------------------------------------------------------
# Bayes MSE of the conditional-mean denoiser


def _fstar(prior, s):
    # point where the posterior spike probability crosses 1/2
    a, eps = prior.active_variance, prior.epsilon
    c = math.log(eps) - math.log1p(-eps) + 0.5 * math.log(s / (a + s))
    if c >= 0:
        return 0.0
    return math.sqrt(-c * 2.0 * s * (a + s) / a)


def mse_of_denoiser(prior: Prior, s: float, tol: float = QUAD_TOL) -> float:
    """Bayes MSE ``E[(eta(X + W) - X)^2]`` with ``W ~ N(0, s)``.

    Integrates the posterior variance against the mixture density of ``f``,
    which keeps every term nonnegative (no cancellation at small ``s``).
    """
    if not (math.isfinite(s) and s > 0):
        raise DomainError(f"effective noise variance must be finite and > 0, got {s}")
    a, eps = prior.active_variance, prior.epsilon
    n0 = 1.0 / math.sqrt(2 * math.pi * s)
    n1 = 1.0 / math.sqrt(2 * math.pi * (a + s))

    def integrand(f):
        dens = (1 - eps) * n0 * math.exp(-f * f / (2 * s)) + eps * n1 * math.exp(-f * f / (2 * (a + s)))
        return 2.0 * dens * float(posterior_variance(f, prior, s))

    # breakpoints on both length scales: sqrt(s) for the null branch and the
    # spike-probability transition, sqrt(a + s) for the active branch
    fs = _fstar(prior, s)
    r0, r1 = math.sqrt(s), math.sqrt(a + s)
    upper = 40.0 * r1
    cand = [fs + k * r0 for k in (-4, -2, -1, 0, 1, 2, 4, 8)]
    cand += [k * r0 for k in (2, 4, 8, 16, 40)] + [k * r1 for k in (1, 2, 4, 8, 16)]
    knots = sorted({0.0, upper, *(c for c in cand if 0.0 < c < upper)})
    total = err = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        val, e = quad(integrand, lo, hi, epsabs=tol * 1e-3, epsrel=1e-12, limit=400)
        total += val
        err += e
    if err > tol:
        raise NumericalError(
            f"mse quadrature did not converge at s={s:.6g}: value={total:.6g} est. error={err:.3g} > {tol:g}"
        )
    return total


class MseCurve:
    """Cubic spline of log(mse) against log(s), built from :func:`mse_of_denoiser`.

    Inputs outside the tabulated range fall back to direct quadrature.
    """

    def __init__(self, prior: Prior, s_min=1e-10, s_max=1e3, n=801):
        self.prior = prior
        self.s_min, self.s_max = s_min, s_max
        ls = np.linspace(math.log(s_min), math.log(s_max), n)
        vals = np.array([mse_of_denoiser(prior, math.exp(v)) for v in ls])
        self._spline = CubicSpline(ls, np.log(vals))

    def __call__(self, s):
        scalar = np.ndim(s) == 0
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(~np.isfinite(s)) or np.any(s <= 0):
            raise DomainError("effective noise variance must be finite and > 0")
        inside = (s >= self.s_min) & (s <= self.s_max)
        out = np.empty_like(s)
        out[inside] = np.exp(self._spline(np.log(s[inside])))
        for idx in zip(*np.nonzero(~inside)):
            out[idx] = mse_of_denoiser(self.prior, float(s[idx]))
        return float(out[0]) if scalar else out


_curve_lock = threading.Lock()


@functools.lru_cache(maxsize=64)
def _build_curve(prior):
    return MseCurve(prior)


def mse_curve(prior: Prior) -> MseCurve:
    """Shared, lazily built :class:`MseCurve` for ``prior``."""
    with _curve_lock:
        return _build_curve(prior)


# --------------------------------------------------------------------------
# recursion


def se_step(sigma_sq, distortion, params: ProblemParams):
    """One SE update; ``distortion = 0`` gives the centralized recursion.

    Vectorized over ``sigma_sq`` and ``distortion``.
    """
    sigma_sq = np.asarray(sigma_sq, dtype=float)
    distortion = np.asarray(distortion, dtype=float)
    if np.any(sigma_sq <= 0):
        raise DomainError("sigma_sq must be > 0")
    if np.any(distortion < 0):
        raise DomainError("distortion must be >= 0")
    eff = sigma_sq + params.P * distortion
    nxt = params.sigma_z2 + mse_curve(params.prior)(eff) / params.kappa
    return float(nxt) if np.ndim(nxt) == 0 else nxt


def fixed_point(params: ProblemParams, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Noise variance at the lossless SE fixed point reached from ``sigma1_sq``."""
    if not tol > 0:
        raise DomainError("tol must be > 0")
    curve = mse_curve(params.prior)
    s = params.sigma1_sq
    for _ in range(max_iter):
        nxt = params.sigma_z2 + curve(s) / params.kappa
        if abs(nxt - s) < tol:
            return nxt
        s = nxt
    raise ConvergenceError(
        f"lossless SE did not converge in {max_iter} iterations; last iterates {s!r}, {nxt!r}"
    )


def mmse(params: ProblemParams, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """MSE at the lossless SE fixed point."""
    return float(mse_curve(params.prior)(fixed_point(params, tol, max_iter)))


def se_trajectory(schedule, params: ProblemParams, rd_model=None, mmse_value=None) -> StateTrajectory:
    """SE prediction for a coding-rate schedule.

    ``schedule`` is a :class:`~mpamp.dpopt.CodingRateSchedule` or a plain
    sequence of rates in bits; ``inf`` means lossless.  A zero rate is a
    no-op iteration (state and estimate unchanged), matching the DP convention.
    """
    from .rd import GAUSSIAN, per_node_source_variance

    rates = list(getattr(schedule, "rates", schedule))
    if not rates:
        raise DomainError("schedule must be nonempty")
    if any(r < 0 for r in rates):
        raise DomainError("rates must be >= 0")
    rd_model = rd_model or GAUSSIAN
    curve = mse_curve(params.prior)
    if mmse_value is None:
        mmse_value = mmse(params)

    s = params.sigma1_sq
    # MSE of the current estimate; the all-zero start has MSE E[X^2]
    current = params.prior.second_moment()
    sig, dist, mses, eff = [s], [], [], []
    for r in rates:
        if r == 0:
            d = 0.0
            e = float("nan")
        else:
            d = 0.0 if math.isinf(r) else float(rd_model.distortion(r, per_node_source_variance(s, params), params=params, sigma_sq=s))
            e = s + params.P * d
            current = float(curve(e))
            s = params.sigma_z2 + current / params.kappa
        sig.append(s)
        dist.append(d)
        mses.append(current)
        eff.append(e)
    return StateTrajectory(
        sigma_sq=sig,
        distortion=dist,
        mse=mses,
        emse=[m - mmse_value for m in mses],
        effective_sq=eff,
        mmse=mmse_value,
    )


def lossless_trajectory(params: ProblemParams, T: int, mmse_value=None) -> StateTrajectory:
    return se_trajectory([math.inf] * T, params, mmse_value=mmse_value)

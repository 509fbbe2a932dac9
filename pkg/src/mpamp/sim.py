"""Monte Carlo AMP and single-process MP-AMP on synthetic instances.

The node-side and fusion-side steps are plain functions so that the
multi-worker harness runs exactly the same arithmetic.
"""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, DomainError
from .model import denoise, denoise_derivative, sample_signal
from .rd import GAUSSIAN
from .sevo import ProblemParams

__all__ = [
    "QuantMode",
    "ProblemInstance",
    "RunRecord",
    "NodeMessage",
    "generate_instance",
    "partition_rows",
    "empirical_sigma",
    "node_step",
    "quantize",
    "fuse",
    "run_centralized_amp",
    "run_mpamp",
    "run_trials",
    "billed_bytes",
]


class QuantMode(enum.IntEnum):
    LOSSLESS = 0
    GAUSSIAN_EMULATION = 1
    UNIFORM_SCALAR = 2

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        names = {"lossless": cls.LOSSLESS, "gaussian": cls.GAUSSIAN_EMULATION,
                 "gaussianemulation": cls.GAUSSIAN_EMULATION, "gaussian_emulation": cls.GAUSSIAN_EMULATION,
                 "uniform": cls.UNIFORM_SCALAR, "uniformscalar": cls.UNIFORM_SCALAR,
                 "uniform_scalar": cls.UNIFORM_SCALAR}
        try:
            return names[str(value).lower()]
        except KeyError:
            raise DomainError(f"unknown quant_mode {value!r}") from None


def partition_rows(M, P):
    """Contiguous row ranges ``[start, stop)``; node ``p`` gets rows M(p-1)/P .. Mp/P."""
    return [((M * p) // P, (M * (p + 1)) // P) for p in range(P)]


@dataclass
class ProblemInstance:
    x: np.ndarray
    A: np.ndarray
    y: np.ndarray
    z: np.ndarray
    seed: int
    params: ProblemParams
    partition: list

    @property
    def M(self):
        return self.A.shape[0]

    @property
    def N(self):
        return self.A.shape[1]

    @property
    def kappa(self):
        return self.M / self.N

    def node_slice(self, p):
        lo, hi = self.partition[p]
        return self.A[lo:hi], self.y[lo:hi]


def generate_instance(params: ProblemParams, N: int, seed: int) -> ProblemInstance:
    M = int(round(params.kappa * N))
    if N < params.P or M < params.P:
        raise DomainError(f"need N >= P and M >= P (N={N}, M={M}, P={params.P})")
    sx, sa, sz = np.random.SeedSequence(seed).spawn(3)
    x = sample_signal(params.prior, N, sx)
    A = np.random.default_rng(sa).standard_normal((M, N))
    A *= 1.0 / math.sqrt(M)
    z = np.random.default_rng(sz).standard_normal(M) * math.sqrt(params.sigma_z2)
    y = A @ x + z
    return ProblemInstance(x, A, y, z, seed, params, partition_rows(M, params.P))


def empirical_sigma(r, M):
    """``||r||^2 / M``, the residual estimate of the channel noise variance."""
    if M < 1:
        raise DomainError("M must be >= 1")
    r = np.asarray(r, dtype=float)
    return float(r @ r) / M


def billed_bytes(N, rate, P=1):
    """Information-theoretic uplink bill: ``P * ceil(N * R / 8)`` bytes."""
    if rate == 0:
        return 0
    return P * math.ceil(N * rate / 8)


@dataclass
class RunRecord:
    mse: list = field(default_factory=list)
    sigma_hat_sq: list = field(default_factory=list)
    bytes_billed: list = field(default_factory=list)
    distortion_target: list = field(default_factory=list)
    distortion_empirical: list = field(default_factory=list)
    entropy_bits: list = field(default_factory=list)
    x_hat: np.ndarray = None
    seed: int = None

    def __len__(self):
        return len(self.mse)


def _check_divergence(rec, t, energy):
    if t >= 3 and rec.mse[-1] > 10 * energy:
        raise DivergenceError(f"AMP diverged at iteration {t}: mse={rec.mse[-1]:.4g}", rec.mse)


def run_centralized_amp(instance: ProblemInstance, T: int) -> RunRecord:
    if T < 1:
        raise DomainError("T must be >= 1")
    A, y, prior = instance.A, instance.y, instance.params.prior
    N, M, kappa = instance.N, instance.M, instance.kappa
    x_t = np.zeros(N)
    r_prev, g_prev = None, None
    rec = RunRecord(seed=instance.seed)
    energy = prior.second_moment()
    for t in range(1, T + 1):
        r = y - A @ x_t
        if r_prev is not None:
            r += r_prev * (g_prev / kappa)
        s = empirical_sigma(r, M)
        f = x_t + A.T @ r
        x_t = denoise(f, prior, s)
        g_prev = float(np.mean(denoise_derivative(f, prior, s)))
        r_prev = r
        rec.mse.append(float(np.mean((x_t - instance.x) ** 2)))
        rec.sigma_hat_sq.append(s)
        _check_divergence(rec, t, energy)
    rec.x_hat = x_t
    return rec


# --------------------------------------------------------------------------
# MP-AMP building blocks, shared with the harness


@dataclass
class NodeMessage:
    """What one node contributes to a round.

    ``values`` is the reconstruction the fusion center will decode; for the
    uniform quantizer ``indices`` and ``step`` are what actually goes on the wire.
    """

    values: np.ndarray
    residual_sq: float
    distortion: float
    empirical_distortion: float
    entropy_bits: float = math.nan
    indices: np.ndarray = None
    step: float = 0.0


def node_step(A_p, y_p, x_t, r_prev, g_prev, kappa, P):
    """Node residual and local estimate ``f_t^p = x_t / P + (A^p)^T r_t^p``."""
    r = y_p - A_p @ x_t
    if r_prev is not None:
        r += r_prev * (g_prev / kappa)
    return r, x_t / P + A_p.T @ r


def _entropy_bits(indices):
    _, counts = np.unique(indices, return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def quantize(f, rate, mode, rd_model=GAUSSIAN, params=None, local_sigma_sq=None, rng_key=None):
    """Apply the node quantizer at ``rate`` bits per component.

    Returns ``(values, target_distortion, indices, step)``.  Gaussian
    emulation adds N(0, D) noise with ``D`` from ``rd_model`` at the message's
    empirical second moment and rounds to float32, the payload precision.
    The uniform quantizer is mid-rise with step ``sqrt(12 D)``.
    """
    mode = QuantMode.parse(mode)
    if mode is QuantMode.LOSSLESS or math.isinf(rate):
        return f, 0.0, None, 0.0
    v = float(f @ f) / f.size
    D = float(rd_model.distortion(rate, v, params=params, sigma_sq=local_sigma_sq))
    if mode is QuantMode.GAUSSIAN_EMULATION:
        noise = np.random.default_rng(rng_key).standard_normal(f.size) * math.sqrt(D)
        return (f + noise).astype(np.float32).astype(np.float64), D, None, 0.0
    step = math.sqrt(12.0 * D)
    idx = np.floor(f / step)
    if np.abs(idx).max() >= 2**31 - 1:
        raise DomainError("uniform quantizer index overflows int32; rate too high for this source")
    idx = idx.astype(np.int32)
    return step * (idx + 0.5), D, idx, step


def make_node_message(f, r, rate, mode, rd_model, params, M_p, key) -> NodeMessage:
    local = float(r @ r) / max(M_p, 1)
    values, D, idx, step = quantize(f, rate, mode, rd_model, params, max(local, 1e-300), key)
    emp = float(np.mean((values - f) ** 2))
    ent = _entropy_bits(idx) if idx is not None else math.nan
    return NodeMessage(values, float(r @ r), D, emp, ent, idx, step)


def fuse(messages, prior, M):
    """Fusion center: sum node messages in node order, denoise.

    Returns ``(x_next, g, sigma_hat_sq, effective_sq)``.
    """
    f_q = messages[0].values.copy()
    for m in messages[1:]:
        f_q += m.values
    s_hat = sum(m.residual_sq for m in messages) / M
    eff = s_hat + sum(m.distortion for m in messages)
    x_next = denoise(f_q, prior, eff)
    g = float(np.mean(denoise_derivative(f_q, prior, eff)))
    return x_next, g, s_hat, eff


def noise_key(seed, t, p):
    return [int(seed), int(t), int(p)]


def run_mpamp(instance: ProblemInstance, schedule, quant_mode="gaussian", rd_model=GAUSSIAN, quant_seed=None,
              workers=1) -> RunRecord:
    """Single-process lossy MP-AMP.

    ``schedule`` holds per-iteration rates (``inf`` = lossless, ``0`` = no-op).
    Per-node work may run on ``workers`` threads; fusion always sums in node
    order.
    """
    rates = list(getattr(schedule, "rates", schedule))
    if not rates:
        raise DomainError("schedule must have at least one iteration")
    mode = QuantMode.parse(quant_mode)
    params, prior = instance.params, instance.params.prior
    P, N, M, kappa = params.P, instance.N, instance.M, instance.kappa
    qseed = instance.seed if quant_seed is None else quant_seed
    slices = [instance.node_slice(p) for p in range(P)]
    x_t = np.zeros(N)
    r_prev = [None] * P
    g_prev = None
    rec = RunRecord(seed=instance.seed)
    energy = prior.second_moment()
    current_mse = float(np.mean(instance.x**2))
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for t, rate in enumerate(rates, start=1):
            if rate == 0:
                rec.mse.append(current_mse)
                rec.sigma_hat_sq.append(rec.sigma_hat_sq[-1] if rec.sigma_hat_sq else math.nan)
                rec.bytes_billed.append(0)
                rec.distortion_target.append(0.0)
                rec.distortion_empirical.append(0.0)
                rec.entropy_bits.append(math.nan)
                continue

            def work(p, x_t=x_t, g_prev=g_prev, t=t, rate=rate):
                A_p, y_p = slices[p]
                r, f = node_step(A_p, y_p, x_t, r_prev[p], g_prev, kappa, P)
                msg = make_node_message(f, r, rate, mode, rd_model, params, A_p.shape[0], noise_key(qseed, t, p))
                return r, msg

            out = list(pool.map(work, range(P))) if pool else [work(p) for p in range(P)]
            r_prev = [o[0] for o in out]
            msgs = [o[1] for o in out]
            x_t, g_prev, s_hat, _ = fuse(msgs, prior, M)
            current_mse = float(np.mean((x_t - instance.x) ** 2))
            rec.mse.append(current_mse)
            rec.sigma_hat_sq.append(s_hat)
            rec.bytes_billed.append(billed_bytes(N, rate, P) if math.isfinite(rate) else P * 8 * N)
            rec.distortion_target.append(float(np.mean([m.distortion for m in msgs])))
            rec.distortion_empirical.append(float(np.mean([m.empirical_distortion for m in msgs])))
            rec.entropy_bits.append(float(np.mean([m.entropy_bits for m in msgs])))
            _check_divergence(rec, t, energy)
    finally:
        if pool:
            pool.shutdown()
    rec.x_hat = x_t
    return rec


def run_trials(params, schedule, N, trials, seed=0, quant_mode="gaussian", rd_model=GAUSSIAN, workers=1,
               centralized=False):
    """Independent trials with seeds ``seed, seed+1, ...``; results in seed order."""

    def one(k):
        inst = generate_instance(params, N, seed + k)
        if centralized:
            return run_centralized_amp(inst, len(list(getattr(schedule, "rates", schedule))))
        return run_mpamp(inst, schedule, quant_mode, rd_model)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, range(trials)))
    return [one(k) for k in range(trials)]

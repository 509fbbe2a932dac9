"""Dynamic program over per-iteration coding rates.

Finds the rate schedule minimizing ``C1 * T + C2 * R_agg`` subject to a
final SE-predicted MSE of at most ``delta``.  The value of a state is

    Psi_h(s) = min_R  C1 * [R != 0] + C2 * R + Psi_{h-1}(next(s, R))

with ``h`` the number of remaining iterations before the terminal one.  A
zero rate is a no-op: no computation, no bits, state unchanged, so a table
of depth ``h`` covers every schedule with at most ``h + 1`` real iterations.
The terminal stage picks the smallest positive grid rate whose denoiser
output meets ``delta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GridCoverageError, HorizonCapError, InfeasibleError, NumericalError
from .rd import GAUSSIAN, per_node_source_variance
from .sevo import ProblemParams, fixed_point, mmse, mse_curve, se_trajectory

__all__ = [
    "CostModel",
    "DpGrids",
    "PolicyTable",
    "CodingRateSchedule",
    "build_policy",
    "recover_schedule",
    "schedule_cost",
    "optimize",
    "transition_table",
    "snap_up",
    "ZERO_RATE_CONVENTION",
]

ZERO_RATE_CONVENTION = "no-op"
_SNAP_RTOL = 1e-12


@dataclass(frozen=True)
class CostModel:
    C1: float
    C2: float

    def __post_init__(self):
        if self.C1 < 0 or self.C2 < 0 or (self.C1 == 0 and self.C2 == 0):
            raise DomainError(f"need C1, C2 >= 0 and not both zero, got {self.C1}, {self.C2}")

    @classmethod
    def from_relative(cls, b: float, C2: float = 1.0) -> "CostModel":
        return cls(C1=b * C2, C2=C2)

    @property
    def b(self) -> float:
        return self.C1 / self.C2 if self.C2 > 0 else math.inf


@dataclass
class CodingRateSchedule:
    """Rates of the real (nonzero) iterations, in bits per component.

    ``padded`` keeps the DP decision sequence including no-op zeros.
    """

    rates: list
    total_cost: float = math.nan
    padded: list = field(default=None, repr=False)

    @property
    def R_agg(self) -> float:
        return float(sum(self.rates))

    @property
    def T(self) -> int:
        return sum(1 for r in self.rates if r != 0)

    def __len__(self):
        return len(self.rates)


def schedule_cost(schedule, cost: CostModel) -> float:
    rates = list(getattr(schedule, "rates", schedule))
    return cost.C1 * sum(1 for r in rates if r != 0) + cost.C2 * float(sum(rates))


@dataclass
class DpGrids:
    """Discretized search space.

    ``sigma_grid`` is stored ascending; its top entry is ``sigma1_sq``.
    """

    sigma_grid: np.ndarray
    rate_grid: np.ndarray
    delta: float
    max_horizon: int = 200

    def __post_init__(self):
        self.sigma_grid = np.asarray(self.sigma_grid, dtype=float)
        self.rate_grid = np.asarray(self.rate_grid, dtype=float)
        if self.sigma_grid.ndim != 1 or self.sigma_grid.size < 2:
            raise DomainError("sigma_grid needs at least two states")
        if np.any(np.diff(self.sigma_grid) <= 0):
            raise DomainError("sigma_grid must be strictly monotone")
        if self.sigma_grid[0] <= 0:
            raise DomainError("sigma_grid states must be > 0")
        if self.rate_grid[0] != 0 or np.any(np.diff(self.rate_grid) <= 0):
            raise DomainError("rate_grid must start at 0 and be strictly increasing")
        if self.max_horizon < 1:
            raise DomainError("max_horizon must be >= 1")

    @classmethod
    def build(cls, params: ProblemParams, delta: float, n_states: int = 1024, rate_step: float = 0.05,
              rate_max: float = 12.0, max_horizon: int = 200, depth: float = 1e-2) -> "DpGrids":
        """Default grids.

        States are log-spaced in the excess ``s - s_fix`` over the lossless
        fixed point, from ``depth`` times the excess at which ``delta`` is met
        up to ``sigma1_sq``.  SE converges geometrically toward ``s_fix``, so
        this spacing moves a roughly constant number of cells per iteration.
        """
        mm = mmse(params)
        if not delta > mm:
            raise InfeasibleError(f"delta={delta:.6g} must exceed MMSE={mm:.6g}")
        s_fix = fixed_point(params)
        top = params.sigma1_sq
        s_delta = _invert_mse(params, delta, s_fix, top)
        lo = max((s_delta - s_fix) * depth, top * 1e-12)
        excess = np.geomspace(lo, top - s_fix, n_states)
        grid = s_fix + excess
        grid[-1] = top
        n_rates = int(round(rate_max / rate_step))
        rates = np.round(np.arange(n_rates + 1) * rate_step, 12)
        return cls(grid, rates, float(delta), max_horizon)

    @property
    def top(self) -> float:
        return float(self.sigma_grid[-1])


def _invert_mse(params, target, lo, hi):
    # largest s in [lo, hi] with mse(s) <= target (mse is increasing)
    curve = mse_curve(params.prior)
    if curve(hi) <= target:
        return hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if curve(mid) <= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return lo


def snap_up(grid, values):
    """Index of the smallest grid state >= value (clipped to the grid)."""
    idx = np.searchsorted(grid, np.asarray(values) * (1 - _SNAP_RTOL), side="left")
    return np.minimum(idx, len(grid) - 1)


def transition_table(params, grids: DpGrids, rd_model=GAUSSIAN):
    """Next-state indices, terminal MSE and per-step distortions.

    Returns ``(next_idx, terminal_mse)``, both shaped ``(n_states, n_rates)``.
    Column 0 (zero rate) maps each state to itself.
    """
    s = grids.sigma_grid[:, None]
    R = grids.rate_grid[None, :]
    v = per_node_source_variance(grids.sigma_grid, params)[:, None]
    if rd_model is GAUSSIAN or getattr(rd_model, "kind", None) == GAUSSIAN.kind:
        D = rd_model.distortion(np.broadcast_to(R, (s.shape[0], R.shape[1])), v)
    else:
        D = np.stack([rd_model.distortion(grids.rate_grid, v_i, params=params, sigma_sq=s_i)
                      for s_i, v_i in zip(grids.sigma_grid, v[:, 0])])
    eff = s + params.P * D
    out_mse = mse_curve(params.prior)(eff.ravel()).reshape(eff.shape)
    nxt = params.sigma_z2 + out_mse / params.kappa
    next_idx = snap_up(grids.sigma_grid, nxt)
    next_idx[:, 0] = np.arange(len(grids.sigma_grid))
    return next_idx, out_mse


@dataclass
class PolicyTable:
    """``values[h, i]`` is Psi_h at state ``i``; ``argmin[h, i]`` the rate index.

    Row 0 is the terminal stage.  ``horizon_used`` is the deepest row, so a
    schedule recovered from it has at most ``horizon_used + 1`` iterations.
    """

    values: np.ndarray
    argmin: np.ndarray
    next_idx: np.ndarray
    horizon_used: int
    cost: CostModel
    stabilized: bool = True

    def value_at_top(self) -> float:
        return float(self.values[self.horizon_used, -1])


def build_policy(params: ProblemParams, cost: CostModel, grids: DpGrids, rd_model=GAUSSIAN,
                 stop_tol=None, strict=True, mmse_value=None) -> PolicyTable:
    """Backward value iteration over horizons.

    Grows the horizon until the whole value table stops decreasing (by more
    than ``stop_tol``), at which point every deeper table is identical.
    With ``strict=False`` hitting ``grids.max_horizon`` returns the truncated
    table instead of raising.

    Ties go to the smaller rate, so no-ops come first and real iterations as
    late as possible.
    """
    mm = mmse(params) if mmse_value is None else mmse_value
    if not grids.delta > mm * (1 + 1e-9):
        raise InfeasibleError(f"delta={grids.delta:.6g} is not above MMSE={mm:.6g}; target unreachable")
    if stop_tol is None:
        stop_tol = 1e-9 * cost.C2 if cost.C2 > 0 else 1e-9 * cost.C1
    next_idx, out_mse = transition_table(params, grids, rd_model)
    rates = grids.rate_grid
    step_cost = cost.C1 * (rates > 0) + cost.C2 * rates
    n = len(grids.sigma_grid)

    # terminal stage: one real iteration that must land within delta
    ok = out_mse <= grids.delta
    ok[:, 0] = False
    has = ok.any(axis=1)
    term = np.where(has, ok.argmax(axis=1), 0)
    psi = np.where(has, step_cost[term], np.inf)
    values, argmins = [psi], [term]

    stabilized = False
    for h in range(1, grids.max_horizon):
        q = step_cost[None, :] + psi[next_idx]
        arg = np.argmin(q, axis=1)
        new = q[np.arange(n), arg]
        values.append(new)
        argmins.append(arg)
        same_inf = np.isinf(new) == np.isinf(psi)
        finite = np.isfinite(new)
        if same_inf.all() and np.all(psi[finite] - new[finite] <= stop_tol):
            stabilized = True
            psi = new
            break
        psi = new
    table = PolicyTable(np.array(values), np.array(argmins), next_idx, len(values) - 1, cost, stabilized)
    if not stabilized and strict:
        raise HorizonCapError(
            f"value table still changing after max_horizon={grids.max_horizon} iterations "
            f"(Psi at sigma1 = {table.value_at_top():.6g})"
        )
    if not np.isfinite(table.value_at_top()):
        raise InfeasibleError(
            f"delta={grids.delta:.6g} not reachable within {len(values)} iterations on the rate grid "
            f"(MMSE={mm:.6g}); widen rate_grid or max_horizon"
        )
    return table


def recover_schedule(policy: PolicyTable, params: ProblemParams, grids: DpGrids, rd_model=GAUSSIAN,
                     mmse_value=None):
    """Forward pass through the policy table from ``sigma1_sq``.

    Follows the DP's own discretized state chain (upward-snapped states).
    The continuous SE path of the chosen rates is checked to stay at or below
    that chain, which guarantees its final MSE meets ``delta``.

    Returns ``(schedule, trajectory)``.
    """
    if not np.isfinite(policy.value_at_top()):
        raise InfeasibleError("policy infeasible at sigma1_sq")
    i = len(grids.sigma_grid) - 1
    padded = []
    for h in range(policy.horizon_used, 0, -1):
        r = int(policy.argmin[h, i])
        padded.append(float(grids.rate_grid[r]))
        i = int(policy.next_idx[i, r])
    r = int(policy.argmin[0, i])
    padded.append(float(grids.rate_grid[r]))
    rates = [r for r in padded if r != 0]

    traj = se_trajectory(rates, params, rd_model, mmse_value=mmse_value)
    # continuous states must stay dominated by the snapped chain
    i = len(grids.sigma_grid) - 1
    k = 0
    for r in padded:
        if r == 0:
            continue
        if traj.sigma_sq[k] > grids.sigma_grid[i] * (1 + 1e-9):
            raise GridCoverageError(
                f"SE state {traj.sigma_sq[k]:.6g} above grid cell {grids.sigma_grid[i]:.6g} at iteration {k + 1}"
            )
        i = int(policy.next_idx[i, int(np.searchsorted(grids.rate_grid, r))])
        k += 1
    slack = 1e-9 * grids.delta
    if traj.final_mse > grids.delta + slack:
        raise NumericalError(f"recovered schedule final MSE {traj.final_mse:.6g} exceeds delta {grids.delta:.6g}")
    sched = CodingRateSchedule(rates=rates, total_cost=schedule_cost(rates, policy.cost), padded=padded)
    return sched, traj


def optimize(params: ProblemParams, cost: CostModel, delta: float, rd_model=GAUSSIAN, grids=None, **grid_kw):
    """Build default grids, solve the DP and recover the schedule."""
    mm = mmse(params)
    grids = grids or DpGrids.build(params, delta, **grid_kw)
    policy = build_policy(params, cost, grids, rd_model, mmse_value=mm)
    sched, traj = recover_schedule(policy, params, grids, rd_model, mmse_value=mm)
    return sched, traj, policy, grids

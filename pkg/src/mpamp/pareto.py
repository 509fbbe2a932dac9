"""Achievable (T, R_agg, MSE) tuples, Pareto filtering and conjecture fits."""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .dpopt import CostModel, DpGrids, build_policy, recover_schedule
from .errors import DomainError, MpampError, NumericalError
from .rd import GAUSSIAN
from .sevo import mmse

log = logging.getLogger(__name__)

__all__ = [
    "AchievablePoint",
    "ParetoFrontier",
    "HullReport",
    "ConjectureFit",
    "LinearFit",
    "dominates",
    "pareto_filter",
    "sweep",
    "monotonicity_violations",
    "convexity_check",
    "linear_fit",
    "fit_conjecture",
]


@dataclass(frozen=True)
class AchievablePoint:
    T: int
    R_agg: float
    mse: float
    b: float = math.nan
    delta: float = math.nan
    delta_over_mmse: float = math.nan
    emse: float = math.nan
    total_cost: float = math.nan
    rates: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.T < 0 or self.R_agg < 0 or self.mse < 0:
            raise DomainError(f"coordinates must be nonnegative: {self.coords}")

    @property
    def coords(self):
        return (self.T, self.R_agg, self.mse)


def dominates(a, b) -> bool:
    """Componentwise ``<=`` on (T, R_agg, MSE); reflexive."""
    ca, cb = getattr(a, "coords", a), getattr(b, "coords", b)
    return all(x <= y for x, y in zip(ca, cb))


@dataclass
class ParetoFrontier:
    points: list
    hull_violation: float = math.nan


def pareto_filter(points) -> ParetoFrontier:
    """Keep the points no distinct point dominates; exact duplicates collapse."""
    points = list(points)
    if not points:
        raise DomainError("pareto_filter needs at least one point")
    # first occurrence wins among duplicate coordinates
    uniq = {}
    for p in points:
        uniq.setdefault(tuple(getattr(p, "coords", p)), p)
    items = list(uniq.items())
    keep = []
    for c, p in items:
        if not any(dominates(o, c) for o, _ in items if o != c):
            keep.append(p)
    return ParetoFrontier(keep)


class SweepPoints(list):
    """List of :class:`AchievablePoint` with the failed cells in ``failures``."""

    def __init__(self, points=(), failures=()):
        super().__init__(points)
        self.failures = list(failures)


def _cell(params, b, delta, grid_kw, rd_model, mm):
    cost = CostModel.from_relative(b)
    grids = DpGrids.build(params, delta, **grid_kw)
    policy = build_policy(params, cost, grids, rd_model, mmse_value=mm)
    sched, traj = recover_schedule(policy, params, grids, rd_model, mmse_value=mm)
    return AchievablePoint(
        T=sched.T,
        R_agg=sched.R_agg,
        mse=traj.final_mse,
        b=b,
        delta=delta,
        delta_over_mmse=delta / mm,
        emse=traj.final_mse - mm,
        total_cost=sched.total_cost,
        rates=tuple(sched.rates),
    ), traj


def sweep(params, b_list, delta_list, grid_kw=None, rd_model=GAUSSIAN, workers=1, relative=False,
          with_trajectories=False):
    """Run the DP for every (b, delta) cell.

    ``relative=True`` reads ``delta_list`` as multiples of the MMSE.  Failed
    cells are logged and collected in ``result.failures``; output order is
    sorted by (b, delta) regardless of ``workers``.
    """
    grid_kw = dict(grid_kw or {})
    mm = mmse(params)
    deltas = [d * mm if relative else d for d in delta_list]
    if any(d <= mm for d in deltas):
        raise DomainError(f"every delta must exceed MMSE={mm:.6g}")
    cells = sorted((float(b), float(d)) for b in b_list for d in deltas)

    def run(cell):
        try:
            return cell, _cell(params, cell[0], cell[1], grid_kw, rd_model, mm), None
        except MpampError as exc:
            log.warning("sweep cell b=%g delta=%g failed: %s", cell[0], cell[1], exc)
            return cell, None, exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    out = SweepPoints(
        [r[0] for _, r, _ in results if r is not None],
        [(c[0], c[1], str(e)) for c, r, e in results if r is None],
    )
    if with_trajectories:
        out.trajectories = {c: r[1] for c, r, _ in results if r is not None}
    return out


def monotonicity_violations(points, tol=0.0):
    """Pairs at equal ``b`` where the smaller delta has smaller T or R_agg.

    Compares neighbours in delta.  Each entry is
    ``(b, delta_small, delta_large, coordinate, value_small, value_large)``.
    """
    by_b = {}
    for p in points:
        by_b.setdefault(p.b, []).append(p)
    bad = []
    for b, pts in sorted(by_b.items()):
        pts = sorted(pts, key=lambda p: p.delta)
        for lo, hi in zip(pts[:-1], pts[1:]):
            for name in ("T", "R_agg"):
                if getattr(lo, name) < getattr(hi, name) - tol:
                    bad.append((b, lo.delta, hi.delta, name, getattr(lo, name), getattr(hi, name)))
    return bad


@dataclass
class HullReport:
    hull_violation: float
    passed: bool
    tol: float
    worst: object = None
    violations: list = field(default_factory=list)

    def __str__(self):
        status = "pass" if self.passed else "FAIL"
        where = "" if self.passed else f"; offending point {getattr(self.worst, 'coords', self.worst)}"
        return f"convexity {status}: hull_violation={self.hull_violation:.4g} (tol {self.tol:g}){where}"


def _normalize(X):
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (X - lo) / span


def convexity_check(frontier, tol=0.02) -> HullReport:
    """Height of each point above the lower convex hull along the MSE axis.

    Axes are rescaled to [0, 1] first.  The hull height at ``(T, R)`` is the
    smallest MSE reachable by a convex combination of the points that lands
    on ``(T, R)`` - a small LP, which also covers collinear and coplanar sets.
    """
    pts = list(getattr(frontier, "points", frontier))
    if len(pts) < 3:
        raise DomainError("convexity check needs at least 3 points")
    X = _normalize(np.array([getattr(p, "coords", p) for p in pts], dtype=float))
    n = len(pts)
    A_eq = np.vstack([X[:, 0], X[:, 1], np.ones(n)])
    viol = []
    for k in range(n):
        res = linprog(X[:, 2], A_eq=A_eq, b_eq=[X[k, 0], X[k, 1], 1.0], bounds=(0, None), method="highs")
        if res.status != 0:
            raise NumericalError(f"hull LP failed for point {k}: {res.message}")
        viol.append(max(0.0, X[k, 2] - res.fun))
    worst = int(np.argmax(viol))
    hv = float(viol[worst])
    if hasattr(frontier, "hull_violation"):
        frontier.hull_violation = hv
    return HullReport(hv, hv < tol, tol, pts[worst], viol)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float
    n: int

    @property
    def r(self):
        return math.copysign(math.sqrt(self.r2), self.slope) if self.r2 >= 0 else math.nan


def linear_fit(x, y) -> LinearFit:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 3:
        raise NumericalError(f"need at least 3 points for a fit, got {x.size}")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(intercept), min(max(r2, 0.0), 1.0), int(x.size))


@dataclass
class ConjectureFit:
    """Tail fits of the rate and EMSE trajectories and the cost scaling.

    ``R_t ~ C4 + C5 t``, ``EMSE_t ~ C8 2^(-C7 t)``, ``D_t ~ C6 2^(-C7D t)``.
    ``cost_fit`` regresses total cost on ``log2(1/EMSE)^2`` across sweep
    points; ``cost_corr`` is its correlation coefficient.
    """

    C4: float
    C5: float
    rate_r2: float
    C7: float
    C8: float
    emse_r2: float
    C6: float = math.nan
    C7_distortion: float = math.nan
    distortion_r2: float = math.nan
    cost_fit: LinearFit = None
    cost_corr: float = math.nan
    burn_in: int = 6


def fit_conjecture(schedule, trajectory, sweep_points=(), burn_in=6) -> ConjectureFit:
    """Least-squares fits over iterations ``t >= burn_in`` (1-based)."""
    rates = np.asarray(getattr(schedule, "rates", schedule), float)
    emse = np.asarray(trajectory.emse, float)
    if len(emse) <= burn_in + 3 - 1 or len(rates) < burn_in + 2:
        raise NumericalError(f"trajectory of length {len(emse)} too short for burn_in={burn_in}")
    t = np.arange(1, len(rates) + 1)
    tail = t >= burn_in
    rf = linear_fit(t[tail], rates[tail])

    te = np.arange(1, len(emse) + 1)
    use = (te >= burn_in) & (emse > 0)
    if np.any((te >= burn_in) & (emse <= 0)):
        warnings.warn("nonpositive EMSE entries excluded from the geometric fit", RuntimeWarning, stacklevel=2)
    ef = linear_fit(te[use], np.log2(emse[use]))

    dist = np.asarray(trajectory.distortion, float)
    dmask = (te >= burn_in) & (dist > 0)
    df = linear_fit(te[dmask], np.log2(dist[dmask])) if dmask.sum() >= 3 else None

    cost_fit, corr = None, math.nan
    pts = [p for p in sweep_points if p.emse > 0]
    if len(pts) >= 3:
        x = np.array([math.log2(1.0 / p.emse) ** 2 for p in pts])
        y = np.array([p.total_cost for p in pts])
        cost_fit = linear_fit(x, y)
        corr = float(np.corrcoef(x, y)[0, 1])
    return ConjectureFit(
        C4=rf.intercept,
        C5=rf.slope,
        rate_r2=rf.r2,
        C7=-ef.slope,
        C8=2.0**ef.intercept,
        emse_r2=ef.r2,
        C6=2.0**df.intercept if df else math.nan,
        C7_distortion=-df.slope if df else math.nan,
        distortion_r2=df.r2 if df else math.nan,
        cost_fit=cost_fit,
        cost_corr=corr,
        burn_in=burn_in,
    )

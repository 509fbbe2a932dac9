import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpamp.dpopt import CodingRateSchedule
from mpamp.errors import DomainError
from mpamp.pareto import (
    AchievablePoint,
    convexity_check,
    dominates,
    fit_conjecture,
    linear_fit,
    monotonicity_violations,
    pareto_filter,
    sweep,
)
from mpamp.sevo import StateTrajectory, mmse

coord = st.tuples(st.integers(0, 6), st.sampled_from([0.0, 0.5, 1.0, 2.5]), st.sampled_from([0.1, 0.2, 0.3]))


@given(coord)
def test_dominance_reflexive(a):
    assert dominates(a, a)


@given(coord, coord, coord)
def test_dominance_transitive(a, b, c):
    if dominates(a, b) and dominates(b, c):
        assert dominates(a, c)


@settings(max_examples=200)
@given(st.lists(coord, min_size=1, max_size=25))
def test_filter_idempotent_and_non_dominating(pts):
    front = pareto_filter(pts).points
    assert pareto_filter(front).points == front
    for a in front:
        assert not any(dominates(b, a) for b in front if b != a)
    # every input is dominated by something on the frontier
    for p in pts:
        assert any(dominates(f, p) for f in front)


def test_filter_collapses_duplicates():
    pts = [(3, 1.0, 0.2), (3, 1.0, 0.2), (4, 2.0, 0.3)]
    assert pareto_filter(pts).points == [(3, 1.0, 0.2)]
    with pytest.raises(DomainError):
        pareto_filter([])


def test_convexity_check_known_sets():
    # points on a plane: hull height zero everywhere
    plane = [(t, r, 1.0 - 0.1 * t - 0.05 * r) for t in range(3) for r in range(3)]
    assert convexity_check(plane).hull_violation < 1e-12
    # a point sitting well above the chord of its neighbours
    bump = [(0, 0, 0.0), (2, 0, 0.0), (1, 0, 0.5), (0, 1, 0.0), (2, 1, 0.0)]
    rep = convexity_check(bump)
    assert rep.hull_violation == pytest.approx(1.0, abs=1e-9)
    assert not rep.passed and rep.worst == (1, 0, 0.5)
    with pytest.raises(DomainError):
        convexity_check([(0, 0, 0), (1, 1, 1)])


def test_linear_fit_exact_line():
    fit = linear_fit([1, 2, 3, 4], [3, 5, 7, 9])
    assert (fit.slope, fit.intercept, fit.r2) == (pytest.approx(2.0), pytest.approx(1.0), pytest.approx(1.0))


def test_fit_conjecture_recovers_synthetic_constants():
    T = 20
    t = np.arange(1, T + 1)
    rates = 0.5 + 0.2 * t
    emse = 3.0 * 2.0 ** (-0.7 * t)
    traj = StateTrajectory(list(np.ones(T + 1)), list(0.01 * 2.0 ** (-0.7 * t)), list(emse + 1e-3), list(emse))
    pts = [AchievablePoint(T=10, R_agg=1, mse=1, emse=e, total_cost=5 + 0.3 * math.log2(1 / e) ** 2)
           for e in (1e-2, 1e-3, 1e-4, 1e-5)]
    fit = fit_conjecture(CodingRateSchedule(list(rates)), traj, pts, burn_in=6)
    assert fit.C4 == pytest.approx(0.5) and fit.C5 == pytest.approx(0.2)
    assert fit.C7 == pytest.approx(0.7) and fit.C8 == pytest.approx(3.0)
    assert fit.rate_r2 == pytest.approx(1.0) and fit.emse_r2 == pytest.approx(1.0)
    assert fit.cost_fit.slope == pytest.approx(0.3) and fit.cost_corr == pytest.approx(1.0)


def test_fit_conjecture_warns_on_nonpositive_emse():
    T = 12
    emse = list(2.0 ** -np.arange(1, T + 1))
    emse[-1] = 0.0
    traj = StateTrajectory([1.0] * (T + 1), [0.0] * T, [1.0] * T, emse)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        fit_conjecture(list(range(1, T + 1)), traj, burn_in=3)
    assert any("nonpositive" in str(x.message) for x in w)


def test_monotonicity_violation_report():
    pts = [AchievablePoint(5, 4.0, 0.1, b=1, delta=0.1), AchievablePoint(6, 3.0, 0.05, b=1, delta=0.05)]
    assert monotonicity_violations(pts) == [(1, 0.05, 0.1, "R_agg", 3.0, 4.0)]


def test_small_sweep(ref_params):
    mm = mmse(ref_params)
    pts = sweep(ref_params, [1, 6], [2, 4], {"n_states": 512}, relative=True)
    assert len(pts) == 4 and not pts.failures
    assert [(p.b, p.delta_over_mmse) for p in pts] == [(1, pytest.approx(2)), (1, pytest.approx(4)),
                                                       (6, pytest.approx(2)), (6, pytest.approx(4))]
    for p in pts:
        assert p.mse <= p.delta and p.emse == pytest.approx(p.mse - mm)
    threaded = sweep(ref_params, [1, 6], [2, 4], {"n_states": 512}, relative=True, workers=3)
    assert [p.coords for p in threaded] == [p.coords for p in pts]

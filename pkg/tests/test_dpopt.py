import math

import numpy as np
import pytest

from mpamp.dpopt import (
    CostModel,
    DpGrids,
    build_policy,
    optimize,
    recover_schedule,
    schedule_cost,
    snap_up,
)
from mpamp.errors import DomainError, HorizonCapError, InfeasibleError
from mpamp.sevo import mmse
from oracles import HORIZON, RATES, Oracle, random_instance


@pytest.mark.parametrize("seed", range(20))
def test_dp_matches_exhaustive_search(seed):
    params, grids, cost = random_instance(seed)
    oracle = Oracle(params, grids)
    opt, _ = oracle.best(cost, HORIZON)
    assert math.isfinite(opt)
    policy = build_policy(params, cost, grids, strict=False)
    assert policy.value_at_top() == opt
    val, seq = oracle.best(cost, policy.horizon_used + 1)
    assert val == opt
    padded = []
    i = len(grids.sigma_grid) - 1
    for h in range(policy.horizon_used, -1, -1):
        r = int(policy.argmin[h, i])
        padded.append(RATES[r])
        if h:
            i = int(policy.next_idx[i, r])
    assert tuple(padded) == seq


def test_unreachable_target_is_infeasible():
    params, grids, cost = random_instance(0)
    grids.delta = mmse(params) * 1.0001
    assert not math.isfinite(Oracle(params, grids).best(cost, HORIZON)[0])
    with pytest.raises(InfeasibleError):
        build_policy(params, cost, grids, strict=False)


def test_schedule_cost_counts_only_real_iterations():
    cost = CostModel(3.0, 2.0)
    assert schedule_cost([1.0, 0.0, 2.5], cost) == 3 * 2 + 2 * 3.5
    assert CostModel.from_relative(2.0).b == 2.0
    with pytest.raises(DomainError):
        CostModel(0.0, 0.0)


def test_snap_up():
    grid = np.array([1.0, 2.0, 4.0])
    np.testing.assert_array_equal(snap_up(grid, [0.5, 1.0, 1.5, 4.0, 9.0]), [0, 0, 1, 2, 2])
    assert snap_up(grid, 2.0 * (1 + 1e-14)) == 1


def test_grid_validation():
    with pytest.raises(DomainError):
        DpGrids([0.2, 0.1], [0, 1], 0.1)
    with pytest.raises(DomainError):
        DpGrids([0.1, 0.2], [1, 2], 0.1)


def test_infeasible_delta(ref_params):
    mm = mmse(ref_params)
    with pytest.raises(InfeasibleError):
        DpGrids.build(ref_params, 0.5 * mm)


def test_horizon_cap(ref_params):
    mm = mmse(ref_params)
    grids = DpGrids.build(ref_params, 3 * mm, n_states=256, max_horizon=3)
    with pytest.raises(HorizonCapError):
        build_policy(ref_params, CostModel.from_relative(2), grids)


def test_reference_schedule_shape(ref_params):
    mm = mmse(ref_params)
    sched, traj, policy, grids = optimize(ref_params, CostModel.from_relative(2), mm + 5e-5)
    rates = np.array(sched.rates)
    assert traj.final_mse <= grids.delta
    assert sched.total_cost == pytest.approx(2 * sched.T + sched.R_agg)
    assert policy.value_at_top() == pytest.approx(sched.total_cost, abs=1e-9)
    # rates grow with t (finer quantization as the estimate improves)
    assert rates[-1] > rates[0]
    assert np.all(np.diff(rates) >= -1e-12)
    assert 8 <= sched.T <= 20


def test_cheap_computation_spends_more_iterations(ref_params):
    mm = mmse(ref_params)
    lo, *_ = optimize(ref_params, CostModel.from_relative(0.3), 3 * mm)
    hi, *_ = optimize(ref_params, CostModel.from_relative(6), 3 * mm)
    assert lo.T >= hi.T
    assert lo.R_agg <= hi.R_agg


def test_recovery_is_deterministic(ref_params):
    mm = mmse(ref_params)
    grids = DpGrids.build(ref_params, 2 * mm, n_states=512)
    pol = build_policy(ref_params, CostModel.from_relative(1), grids)
    a, _ = recover_schedule(pol, ref_params, grids)
    b, _ = recover_schedule(build_policy(ref_params, CostModel.from_relative(1), grids), ref_params, grids)
    assert a.rates == b.rates

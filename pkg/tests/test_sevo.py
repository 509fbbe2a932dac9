import math

import numpy as np
import pytest

from mpamp.errors import DomainError
from mpamp.model import denoise, sample_signal
from mpamp.rd import GAUSSIAN, per_node_source_variance
from mpamp.sevo import (
    ProblemParams,
    fixed_point,
    lossless_trajectory,
    mmse,
    mse_curve,
    mse_of_denoiser,
    se_step,
    se_trajectory,
)


def test_sigma1(ref_params):
    assert ref_params.sigma1_sq == pytest.approx(0.2525, abs=1e-15)


def test_mse_limits(prior):
    assert mse_of_denoiser(prior, 1e6) == pytest.approx(prior.second_moment(), rel=1e-4)
    assert mse_of_denoiser(prior, 1e-8) < 1e-8


@pytest.mark.parametrize("s", [0.003, 0.05, 0.5])
def test_mse_against_monte_carlo(prior, s):
    n = 2_000_000
    x = sample_signal(prior, n, 11)
    f = x + np.random.default_rng(12).standard_normal(n) * math.sqrt(s)
    err = (denoise(f, prior, s) - x) ** 2
    se = err.std() / math.sqrt(n)
    assert abs(err.mean() - mse_of_denoiser(prior, s)) < 4 * se


def test_mse_is_increasing_and_below_prior_energy(prior):
    s = np.geomspace(1e-6, 1e2, 60)
    m = mse_curve(prior)(s)
    assert np.all(np.diff(m) > 0)
    assert np.all(m < prior.second_moment())


def test_spline_table_agrees_with_quadrature(prior):
    curve = mse_curve(prior)
    for s in np.geomspace(1e-9, 5e2, 23):
        assert curve(s) == pytest.approx(mse_of_denoiser(prior, s), rel=1e-7)


def test_lossless_trajectory_converges_to_fixed_point(ref_params):
    s_fix = fixed_point(ref_params)
    mm = mmse(ref_params)
    assert s_fix == pytest.approx(ref_params.sigma_z2 + mse_of_denoiser(ref_params.prior, s_fix) / 0.4, rel=1e-10)
    traj = lossless_trajectory(ref_params, 80)
    assert np.all(np.diff(traj.mse) <= 0)
    assert traj.final_mse - mm < 1e-10
    assert len(traj.sigma_sq) == 81


def test_se_step_adds_quantization_noise(ref_params):
    s, D = 0.1, 1e-4
    out = mse_of_denoiser(ref_params.prior, s + 100 * D)
    assert se_step(s, D, ref_params) == pytest.approx(ref_params.sigma_z2 + out / 0.4, rel=1e-7)


def test_zero_rate_is_a_noop_and_infinite_rate_is_lossless(small_params):
    a = se_trajectory([2.0, 0.0, 3.0], small_params, GAUSSIAN)
    b = se_trajectory([2.0, 3.0], small_params, GAUSSIAN)
    assert a.final_mse == b.final_mse
    assert a.mse[1] == a.mse[0]
    c = se_trajectory([math.inf] * 5, small_params)
    d = lossless_trajectory(small_params, 5)
    np.testing.assert_allclose(c.mse, d.mse, rtol=0, atol=0)


def test_lossy_trajectory_uses_gaussian_distortion(small_params):
    traj = se_trajectory([1.0, 2.0], small_params, GAUSSIAN)
    v = per_node_source_variance(small_params.sigma1_sq, small_params)
    assert traj.distortion[0] == pytest.approx(v / 4, rel=1e-12)
    assert traj.effective_sq[0] == pytest.approx(small_params.sigma1_sq + 4 * v / 4, rel=1e-12)


def test_lossy_never_beats_lossless(small_params):
    lossy = se_trajectory([1.5] * 10, small_params, GAUSSIAN)
    ref = lossless_trajectory(small_params, 10)
    assert np.all(np.asarray(lossy.mse) >= np.asarray(ref.mse))


def test_params_validation(prior):
    with pytest.raises(DomainError):
        ProblemParams(prior, 0.0, 0.1)
    with pytest.raises(DomainError):
        ProblemParams(prior, 0.4, 0.1, P=0)
    with pytest.raises(DomainError):
        se_trajectory([-1.0], ProblemParams(prior, 0.4, 0.1))

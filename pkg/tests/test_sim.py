import math

import numpy as np
import pytest

from mpamp.errors import DomainError
from mpamp.model import Prior
from mpamp.rd import GAUSSIAN, node_marginal, rate_at_distortion
from mpamp.sevo import ProblemParams
from mpamp.sim import (
    QuantMode,
    billed_bytes,
    empirical_sigma,
    generate_instance,
    partition_rows,
    quantize,
    run_centralized_amp,
    run_mpamp,
    run_trials,
)


def params_with(P, kappa=0.4, noise=1 / 400):
    return ProblemParams(Prior(0.1), kappa, noise, P)


def test_partition_covers_rows_once():
    parts = partition_rows(10, 4)
    assert parts == [(0, 2), (2, 5), (5, 7), (7, 10)]
    assert sum(hi - lo for lo, hi in partition_rows(4000, 100)) == 4000


def test_instance_statistics_and_determinism():
    inst = generate_instance(params_with(4), 2000, 5)
    assert inst.M == 800 and inst.kappa == 0.4
    norms = np.sum(inst.A**2, axis=0)
    assert norms.mean() == pytest.approx(1.0, abs=4 * math.sqrt(2 / 800 / 2000))
    frac = np.mean(inst.x != 0)
    assert abs(frac - 0.1) < 4 * math.sqrt(0.09 / 2000)
    again = generate_instance(params_with(4), 2000, 5)
    np.testing.assert_array_equal(inst.y, again.y)
    with pytest.raises(DomainError):
        generate_instance(params_with(8), 4, 0)


def test_empirical_sigma_examples():
    assert empirical_sigma(np.zeros(5), 5) == 0.0
    assert empirical_sigma(np.ones(4), 4) == 1.0
    with pytest.raises(DomainError):
        empirical_sigma(np.ones(4), 0)


def test_first_iteration_noise_estimate():
    inst = generate_instance(params_with(1), 10_000, 3)
    rec = run_centralized_amp(inst, 1)
    assert rec.sigma_hat_sq[0] == pytest.approx(0.2525, rel=0.05)


def test_noiseless_overdetermined_recovers_exactly():
    inst = generate_instance(params_with(1, kappa=2.0, noise=0.0), 500, 1)
    rec = run_centralized_amp(inst, 30)
    assert rec.mse[-1] < 1e-6


@pytest.mark.parametrize("P", [1, 2, 4])
def test_lossless_mpamp_equals_centralized(P):
    inst = generate_instance(params_with(P), 1000, 17)
    ref = run_centralized_amp(inst, 12)
    rec = run_mpamp(inst, [math.inf] * 12, "lossless")
    assert np.max(np.abs(rec.x_hat - ref.x_hat)) < 1e-8
    rec2 = run_mpamp(inst, [math.inf] * 12, "gaussian")
    np.testing.assert_array_equal(rec.x_hat, rec2.x_hat)


def test_gaussian_emulation_hits_target_distortion():
    inst = generate_instance(params_with(4), 4000, 2)
    rec = run_mpamp(inst, [1.0, 2.0, 3.0, 4.0], "gaussian")
    for emp, tgt in zip(rec.distortion_empirical, rec.distortion_target):
        assert emp == pytest.approx(tgt, rel=5 * math.sqrt(2 / 4000))


def test_uniform_quantizer_at_four_bits():
    inst = generate_instance(params_with(4), 4000, 2)
    rec = run_mpamp(inst, [4.0] * 6, "uniform")
    for emp, tgt in zip(rec.distortion_empirical, rec.distortion_target):
        assert emp == pytest.approx(tgt, rel=0.25)


def test_uniform_quantizer_pays_more_than_rate_distortion_bound():
    # first iteration: f^p is x/P plus Gaussian noise, whose R(D) Blahut-Arimoto gives
    params = params_with(2)
    inst = generate_instance(params, 4000, 2)
    rec = run_mpamp(inst, [4.0], "uniform")
    A_p, y_p = inst.node_slice(0)
    f = A_p.T @ y_p
    v_emp = float(f @ f) / f.size
    sigma_match = params.P * (v_emp - params.prior.second_moment() / params.P**2)
    src = node_marginal(sigma_match, params, 401)
    bound = rate_at_distortion(src, rec.distortion_empirical[0]).rate
    assert rec.entropy_bits[0] > bound


def test_uniform_quantizer_is_mid_rise():
    f = np.array([-0.26, -0.01, 0.0, 0.01, 0.49])
    values, D, idx, step = quantize(f, 2.0, "uniform", GAUSSIAN)
    assert idx.dtype == np.int32
    np.testing.assert_allclose(values, step * (np.floor(f / step) + 0.5))
    assert step == pytest.approx(math.sqrt(12 * D))
    assert np.all(values != 0)


def test_zero_rate_round_is_noop():
    inst = generate_instance(params_with(2), 1000, 4)
    a = run_mpamp(inst, [2.0, 0.0, 3.0], "gaussian", quant_seed=9)
    assert a.mse[1] == a.mse[0] and a.bytes_billed[1] == 0


def test_bit_exact_reproducibility_and_threads():
    inst = generate_instance(params_with(4), 1000, 8)
    a = run_mpamp(inst, [1.5, 2.0, 2.5], "gaussian")
    b = run_mpamp(inst, [1.5, 2.0, 2.5], "gaussian")
    c = run_mpamp(inst, [1.5, 2.0, 2.5], "gaussian", workers=4)
    assert a.mse == b.mse == c.mse
    t1 = run_trials(params_with(4), [2.0] * 3, 800, 3, seed=1)
    t2 = run_trials(params_with(4), [2.0] * 3, 800, 3, seed=1, workers=3)
    assert [r.mse for r in t1] == [r.mse for r in t2]


def test_billing_and_mode_parsing():
    assert billed_bytes(1000, 1.0, 4) == 500
    assert billed_bytes(1001, 1.0, 1) == 126
    assert billed_bytes(1000, 0.0, 4) == 0
    assert QuantMode.parse("uniform") is QuantMode.UNIFORM_SCALAR
    with pytest.raises(DomainError):
        QuantMode.parse("lattice")
    inst = generate_instance(params_with(1), 200, 0)
    with pytest.raises(DomainError):
        run_mpamp(inst, [1.0], "lattice")
    with pytest.raises(DomainError):
        run_mpamp(inst, [])

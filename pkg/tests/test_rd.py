import math

import numpy as np
import pytest

from mpamp.errors import DomainError
from mpamp.model import Prior
from mpamp.rd import (
    GAUSSIAN,
    BlahutArimotoRd,
    DiscreteSource,
    blahut_arimoto,
    discretize_gaussian,
    discretize_mixture,
    gaussian_distortion_to_rate,
    gaussian_rate_to_distortion,
    make_rd_model,
    node_marginal,
    per_node_source_variance,
    rate_at_distortion,
    rd_sweep,
)
from mpamp.sevo import ProblemParams


def h2(p):
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def test_gaussian_closed_form():
    assert gaussian_rate_to_distortion(1.0, 2.0) == 0.5
    assert gaussian_rate_to_distortion(0.0, 2.0) == 2.0
    assert gaussian_distortion_to_rate(0.5, 2.0) == pytest.approx(1.0, abs=1e-15)
    assert gaussian_distortion_to_rate(3.0, 2.0) == 0.0
    with pytest.raises(DomainError):
        gaussian_rate_to_distortion(-0.1, 1.0)


def test_per_node_variance(ref_params):
    v = per_node_source_variance(0.2525, ref_params)
    assert v == pytest.approx(0.1 / 100**2 + 0.2525 / 100, rel=1e-15)


@pytest.mark.parametrize("p", [0.1, 0.3])
@pytest.mark.parametrize("slope", [1.0, 2.5, 5.0])
def test_binary_source_matches_hamming_rd(p, slope):
    # on {0, 1} squared error is Hamming distortion: R(D) = h(p) - h(D)
    src = DiscreteSource([0.0, 1.0], [1 - p, p])
    pt = blahut_arimoto(src, slope, tol=1e-13, max_iter=200000)
    if pt.distortion < min(p, 1 - p) - 1e-9:
        assert pt.rate == pytest.approx(h2(p) - h2(pt.distortion), abs=1e-6)
    else:
        assert pt.rate < 1e-6


@pytest.mark.parametrize("ratio", [0.5, 0.1, 0.01])
def test_discretized_gaussian_near_shannon(ratio):
    src = discretize_gaussian(1.0, 1001)
    pt = rate_at_distortion(src, ratio * src.variance)
    assert pt.rate == pytest.approx(0.5 * math.log2(src.variance / pt.distortion), abs=0.05)


def test_sweep_convex_nonincreasing():
    src = discretize_gaussian(1.0, 301)
    pts = rd_sweep(src, np.geomspace(0.7, 60, 12))
    R = np.array([p.rate for p in pts])
    D = np.array([p.distortion for p in pts])
    order = np.argsort(D)
    R, D = R[order], D[order]
    assert np.all(np.diff(R) <= 1e-9)
    slopes = np.diff(R) / np.diff(D)
    assert np.all(np.diff(slopes) >= -1e-6 * np.abs(slopes[:-1]))


def test_source_validation():
    with pytest.raises(DomainError):
        DiscreteSource([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(DomainError):
        discretize_mixture([1.0], [1.0], n=10)
    with pytest.raises(DomainError):
        blahut_arimoto(discretize_gaussian(1.0, 11), 0.0)


def test_degenerate_source_needs_no_bits():
    pt = blahut_arimoto(DiscreteSource([3.0], [1.0]), 1.0)
    assert pt.rate == 0.0 and pt.distortion == 0.0


def test_node_marginal_moments(small_params):
    src = node_marginal(0.05, small_params, n=801)
    assert src.mean == pytest.approx(0.0, abs=1e-12)
    assert src.variance == pytest.approx(per_node_source_variance(0.05, small_params), rel=1e-3)


def test_ba_model_close_to_gaussian_for_many_nodes(ref_params):
    # with P = 100 the node marginal is dominated by its Gaussian noise share
    m = BlahutArimotoRd(per_decade=2)
    s = 10 ** -0.5
    v = per_node_source_variance(s, ref_params)
    for r in (0.5, 1.5, 3.0, 6.0):
        ratio = m.distortion(r, v, ref_params, s) / GAUSSIAN.distortion(r, v)
        assert 0.95 < ratio <= 1.0 + 1e-3


def test_ba_model_never_exceeds_gaussian():
    # the Gaussian source is the hardest to compress at a given variance
    params = ProblemParams(Prior(0.1), 0.4, 1 / 400, 4)
    m = BlahutArimotoRd(per_decade=1, n_slopes=6)
    s = 0.1
    v = per_node_source_variance(s, params)
    d = m.distortion(np.array([0.25, 1.0, 2.0]), v, params, s)
    assert np.all(d <= GAUSSIAN.distortion(np.array([0.25, 1.0, 2.0]), v) * (1 + 1e-3))


def test_make_rd_model():
    assert make_rd_model("gaussian") is GAUSSIAN
    assert isinstance(make_rd_model("blahut_arimoto"), BlahutArimotoRd)
    with pytest.raises(DomainError):
        make_rd_model("lbg")

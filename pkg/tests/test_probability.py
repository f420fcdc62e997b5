import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roadlayout.errors import ConfigError, PredictionError
from roadlayout.probability import (
    INACTIVE,
    BinDistribution,
    BinSpec,
    argmax_index,
    bin_specs,
    decode_argmax,
    decode_expectation,
    discretize,
)

UNIT = BinSpec(64, 0.0, 64.0, 1.0)


def test_value_10_3_lands_in_bin_10():
    w = discretize(10.3, UNIT).weights
    assert argmax_index(w) == 10
    # direct Gaussian density at the centers j + 0.5
    dens = np.array([math.exp(-0.5 * ((j + 0.5 - 10.3) / 1.0) ** 2) for j in range(64)])
    np.testing.assert_allclose(w, dens / dens.sum(), rtol=0, atol=1e-12)


def test_delta_limit_is_one_hot():
    spec = BinSpec(16, 0.0, 16.0, 1e-4)
    w = discretize(5.5, spec).weights
    assert w[5] == pytest.approx(1.0, abs=1e-12)


@given(st.floats(2.5, 5.0))
def test_weights_sum_to_one(v):
    for spec in bin_specs()[:2]:
        assert abs(discretize(v, spec).weights.sum() - 1.0) <= 1e-9


@given(st.floats(0.0, 61.0))
@settings(max_examples=200)
def test_shift_equivariance(v):
    # shifting by whole bins shifts the weights, up to renormalization of the overlap
    a = discretize(v, UNIT).weights[:-3]
    b = discretize(v + 3.0, UNIT).weights[3:]
    np.testing.assert_allclose(b / b.sum(), a / a.sum(), rtol=1e-9, atol=1e-15)


def test_decode_error_within_half_bin():
    rng = np.random.default_rng(0)
    for spec in bin_specs():
        lo, hi = spec.low + 3 * spec.sigma, spec.high - 3 * spec.sigma
        for v in rng.uniform(lo, hi, 200):
            assert abs(decode_expectation(discretize(v, spec), spec) - v) <= spec.width / 2


def test_inactive_encodes_and_decodes(specs):
    spec = specs[1]  # lane_width_left_1
    assert spec.inactive and spec.size == 65
    d = discretize(None, spec)
    assert d.weights[INACTIVE] == 1.0
    assert decode_expectation(d, spec) is None
    assert decode_argmax(d, spec) is None
    with pytest.raises(ValueError):
        discretize(None, specs[0])


def test_uniform_active_decodes_to_midpoint(specs):
    spec = specs[1]
    w = np.r_[0.0, np.full(spec.k, 1.0 / spec.k)]
    assert decode_expectation(w, spec) == pytest.approx((spec.low + spec.high) / 2, abs=1e-12)


def test_argmax_tie_takes_lower_index():
    w = np.zeros(64)
    w[[7, 9]] = 0.5
    assert decode_argmax(w, UNIT) == 7.5


def test_out_of_range_is_clamped_and_flagged():
    d = discretize(80.0, UNIT)
    assert d.clamped
    assert argmax_index(d) == 63


def test_bad_specs_and_weights():
    with pytest.raises(ConfigError):
        BinSpec(64, 0.0, 1.0, 0.0)
    with pytest.raises(ConfigError):
        BinSpec(64, 1.0, 1.0, 0.1)
    with pytest.raises(PredictionError):
        BinDistribution(np.array([0.5, 0.6]))
    with pytest.raises(PredictionError):
        BinDistribution(np.array([-0.1, 1.1]))


def test_index_of_matches_bins(specs):
    spec = specs[0]
    assert spec.index_of(spec.low) == 0
    assert spec.index_of(spec.high) == spec.k - 1
    assert specs[1].index_of(spec.low) == 1
    assert specs[1].index_of(None) == INACTIVE

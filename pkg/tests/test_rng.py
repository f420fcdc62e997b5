import numpy as np
import pytest
from hypothesis import given, strategies as st

from roadlayout.rng import CounterRNG, mix64, split

# published SplitMix64 reference outputs for seed 1234567
REFERENCE_1234567 = [
    6457827717110365317,
    3203168211198807973,
    9817491932198370423,
    4593380528125082431,
    16408922859458223821,
]


def test_matches_reference_stream():
    rng = CounterRNG(1234567)
    assert [rng.next_u64() for _ in range(5)] == REFERENCE_1234567


def test_frozen_split_values():
    # frozen from a stateful SplitMix64 reimplementation
    assert [split(42, i) for i in range(3)] == [
        8340300665993417630,
        3593456312316644946,
        299023939669904456,
    ]


def test_frozen_uniform_and_randint():
    rng = CounterRNG(7)
    assert [rng.uniform() for _ in range(3)] == [
        0.3898297483912715,
        0.01678829452815611,
        0.9007606806068834,
    ]
    rng = CounterRNG(7)
    assert [rng.randint(10) for _ in range(5)] == [3, 0, 9, 5, 4]


def test_split_rejects_negative_index():
    with pytest.raises(ValueError):
        split(1, -1)


@given(st.integers(0, 2**64 - 1))
def test_mix64_stays_in_64_bits(z):
    assert 0 <= mix64(z) < 2**64


@given(st.integers(0, 2**64 - 1), st.integers(1, 1000))
def test_randint_in_range(seed, n):
    rng = CounterRNG(seed)
    assert all(0 <= rng.randint(n) < n for _ in range(20))


def test_same_seed_same_stream():
    a, b = CounterRNG(99), CounterRNG(99)
    assert [a.normal() for _ in range(10)] == [b.normal() for _ in range(10)]


def test_normal_moments():
    rng = CounterRNG(3)
    x = np.array([rng.normal() for _ in range(20000)])
    assert abs(x.mean()) < 0.05
    assert abs(x.std() - 1.0) < 0.05


def test_categorical_skips_zero_weights():
    rng = CounterRNG(5)
    draws = {rng.categorical([0.0, 1.0, 0.0, 2.0]) for _ in range(200)}
    assert draws == {1, 3}
    with pytest.raises(ValueError):
        rng.categorical([0.0, 0.0])

import numpy as np
import pytest

from roadlayout.errors import ConfigError
from roadlayout.inference.qpbo import (
    UNLABELED,
    PartialLabeling,
    binary_energy,
    complete_labeling,
    qpbo,
)

from oracles import enumerate_energies, persistency_holds, random_binary_instance


def test_single_variable():
    assert qpbo(np.array([[1.0, 0.0]])).labels.tolist() == [1]


def test_two_variable_potts():
    unary = np.array([[0.0, 1.0], [0.0, 1.0]])
    pairs = [(0, 1, np.array([[0.0, 2.0], [2.0, 0.0]]))]
    labels = qpbo(unary, pairs).labels
    assert labels.tolist() == [0, 0]
    states, e = enumerate_energies(unary, pairs)
    assert binary_energy(labels, unary, pairs) == e.min() == 0.0


def test_frustrated_cycle_is_persistent():
    # each pair prefers disagreement: no labeling satisfies all three
    anti = np.array([[3.0, 0.0], [0.0, 3.0]])
    unary = np.array([[0.0, 1.0], [0.5, 0.0], [0.0, 0.0]])
    pairs = [(0, 1, anti), (1, 2, anti), (0, 2, anti)]
    labels = qpbo(unary, pairs).labels
    states, e = enumerate_energies(unary, pairs)
    optima = states[e == e.min()]
    for i, x in enumerate(labels):
        if x != UNLABELED:
            assert (optima[:, i] == x).any()
    assert persistency_holds(labels, states, e)


def test_submodular_fully_labeled_and_optimal():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 11))
        unary, pairs = random_binary_instance(rng, n, submodular=True)
        labels = qpbo(unary, pairs).labels
        assert (labels != UNLABELED).all()
        _, e = enumerate_energies(unary, pairs)
        assert binary_energy(labels, unary, pairs) == e.min()


def test_general_instances_persistent():
    rng = np.random.default_rng(6)
    for _ in range(200):
        n = int(rng.integers(1, 10))
        unary, pairs = random_binary_instance(rng, n, submodular=False, density=0.7)
        labels = qpbo(unary, pairs).labels
        states, e = enumerate_energies(unary, pairs)
        assert persistency_holds(labels, states, e)


def test_completion_reaches_optimum():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(2, 9))
        unary, pairs = random_binary_instance(rng, n, submodular=False, density=0.8)
        partial = qpbo(unary, pairs)
        full = complete_labeling(partial, unary, pairs)
        _, e = enumerate_energies(unary, pairs)
        assert binary_energy(full, unary, pairs) == e.min()


def test_completion_falls_back_to_local_search():
    unary = np.tile([[0.0, 1.0]], (20, 1))
    partial = PartialLabeling(np.full(20, UNLABELED, dtype=np.int8))
    assert complete_labeling(partial, unary, [], max_enumerate=4).tolist() == [0] * 20


def test_empty_and_bad_input():
    assert qpbo(np.zeros((0, 2))).labels.size == 0
    with pytest.raises(ConfigError):
        qpbo(np.zeros((3, 3)))
    with pytest.raises(ConfigError):
        qpbo(np.zeros((2, 2)), [(0, 1, np.zeros(3))])

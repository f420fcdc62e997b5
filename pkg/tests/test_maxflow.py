import numpy as np
import pytest

from roadlayout.errors import ConfigError
from roadlayout.inference.maxflow import FlowNetwork, max_flow

from oracles import brute_min_cut, random_flow_graph


def network(n, arcs, s=0, t=None):
    net = FlowNetwork(n, s, n - 1 if t is None else t)
    for u, v, c in arcs:
        net.add_arc(u, v, c)
    return net


def test_single_arc():
    assert max_flow(network(2, [(0, 1, 5.0)])).value == 5.0


def test_diamond_equals_enumerated_cut():
    # nodes s=0, a=1, b=2, t=3
    arcs = [(0, 1, 3.0), (0, 2, 2.0), (1, 3, 2.0), (2, 3, 3.0), (1, 2, 1.0)]
    expected = brute_min_cut(4, 0, 3, arcs)
    result = max_flow(network(4, arcs))
    assert result.value == expected == 5.0
    assert sum(c for _, _, c in result.cut_arcs(network(4, arcs))) == expected


def test_unreachable_sink():
    result = max_flow(network(3, [(0, 1, 4.0)]))
    assert result.value == 0.0
    assert result.source_side == (True, True, False)


def test_random_graphs_match_exhaustive_cut():
    rng = np.random.default_rng(11)
    for _ in range(150):
        n = int(rng.integers(2, 9))
        arcs = random_flow_graph(rng, n)
        net = network(n, arcs)
        result = max_flow(net)
        assert result.value == brute_min_cut(n, 0, n - 1, arcs)
        assert sum(c for _, _, c in result.cut_arcs(net)) == result.value


def test_fractional_capacities_are_quantized():
    result = max_flow(network(3, [(0, 1, 0.25), (1, 2, 0.125)]))
    assert result.value == pytest.approx(0.125, abs=1e-9)


def test_invalid_networks():
    with pytest.raises(ConfigError):
        FlowNetwork(2, 0, 0)
    with pytest.raises(ConfigError):
        FlowNetwork(2, 0, 5)
    net = FlowNetwork(2, 0, 1)
    with pytest.raises(ConfigError):
        net.add_arc(0, 1, -1.0)
    with pytest.raises(ConfigError):
        net.add_arc(0, 4, 1.0)

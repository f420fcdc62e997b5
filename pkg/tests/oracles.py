"""Brute-force references shared by the unit and acceptance tests."""

import itertools

import numpy as np


def random_binary_instance(rng, n, submodular, density=0.5, high=20):
    """Integer-cost pairwise binary energy; integers keep every comparison exact."""
    unary = rng.integers(0, high, size=(n, 2)).astype(float)
    pairs = []
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() >= density:
            continue
        tab = rng.integers(0, high, size=(2, 2)).astype(float)
        if submodular:
            excess = tab[0, 0] + tab[1, 1] - tab[0, 1] - tab[1, 0]
            if excess > 0:
                tab[0, 1] += excess
        pairs.append((i, j, tab))
    return unary, pairs


def enumerate_energies(unary, pairs):
    """Every state of the binary energy (rows, lexicographic) and its energy."""
    n = len(unary)
    states = np.array(list(itertools.product((0, 1), repeat=n)), dtype=int).reshape(-1, n)
    e = np.zeros(len(states))
    for i in range(n):
        e += unary[i][states[:, i]]
    for i, j, tab in pairs:
        e += tab[states[:, i], states[:, j]]
    return states, e


def brute_min_cut(n_nodes, source, sink, arcs):
    """Cheapest s-t cut by listing every node partition."""
    others = [v for v in range(n_nodes) if v not in (source, sink)]
    best = float("inf")
    for bits in itertools.product((False, True), repeat=len(others)):
        side = {source: True, sink: False}
        side.update(zip(others, bits))
        cost = sum(c for u, v, c in arcs if side[u] and not side[v])
        best = min(best, cost)
    return best


def random_flow_graph(rng, n_nodes, density=0.4, high=20):
    arcs = []
    for u in range(n_nodes):
        for v in range(n_nodes):
            if u != v and rng.random() < density:
                arcs.append((u, v, float(rng.integers(0, high))))
    return arcs


def persistency_holds(labels, states, energies):
    """Some optimum agrees with every labeled variable at once."""
    labeled = labels >= 0
    agree = (states[:, labeled] == labels[labeled]).all(axis=1)
    return energies[agree].min() == energies.min()


CONTROLLED = (
    "dist_side_road_left",
    "dist_side_road_right",
    "side_road_width_left",
    "side_road_width_right",
    "delimiter_width_left",
    "delimiter_width_right",
    "sidewalk_width_left",
    "sidewalk_width_right",
    "curvature",
)


def reduced_model(model, values, coupled, rng, cap=8):
    """Free the 14 binaries and one continuous variable (domain capped), freeze the rest.

    The capped domain always holds the inactive bin and the variable's value in ``values``.
    """
    n_binary = 14
    allowed = {v: int(values[v]) for v in range(n_binary, model.n_vars) if v != coupled}
    size = model.sizes[coupled]
    extra = rng.choice(np.arange(1, size), cap - 2, replace=False)
    allowed[coupled] = sorted({0, int(values[coupled]), *map(int, extra)})
    return model.restrict(allowed)

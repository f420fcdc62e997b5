"""Roof-dual partial labeling of quadratic pseudo-boolean energies (QPBO).

Each variable ``x_i`` gets two graph nodes, ``p_i`` (source side iff
``x_i = 0``) and its complement ``pbar_i``. Every cost term is split in half
over a mirror pair of arcs, so submodular and non-submodular terms are both
representable. After a max-flow the flow is symmetrized over mirror pairs and
the residual graph read as an implication graph; strongly connected
components then give the persistent labels, and variables whose two nodes
share a component stay unlabeled.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from roadlayout.errors import ConfigError
from roadlayout.inference.maxflow import DEFAULT_QUANTUM, ResidualGraph, quantize

UNLABELED = -1


@dataclass(frozen=True, eq=False)
class PartialLabeling:
    """Labels in {0, 1} or :data:`UNLABELED` (-1) per variable."""

    labels: np.ndarray

    @property
    def labeled(self) -> np.ndarray:
        return self.labels != UNLABELED

    @property
    def unlabeled(self) -> np.ndarray:
        return np.flatnonzero(self.labels == UNLABELED)


def _table(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.shape != (2, 2):
        raise ConfigError("pairwise cost tables must be 2 x 2")
    return t


def qpbo(
    unary: np.ndarray,
    pairwise: Iterable[tuple[int, int, np.ndarray]] = (),
    quantum: float = DEFAULT_QUANTUM,
) -> PartialLabeling:
    """Persistent partial labeling of ``sum_i unary[i, x_i] + sum table[x_i, x_j]``.

    Args:
        unary: (n, 2) costs.
        pairwise: triples ``(i, j, table)`` with ``table[a, b]`` the cost of
            ``x_i = a, x_j = b``; ``i != j``.
        quantum: capacity resolution of the underlying max-flow.
    """
    unary = np.asarray(unary, dtype=float)
    if unary.ndim != 2 or unary.shape[1] != 2:
        raise ConfigError("unary costs must have shape (n, 2)")
    n = unary.shape[0]
    if n == 0:
        return PartialLabeling(np.zeros(0, dtype=np.int8))
    s, t = 2 * n, 2 * n + 1
    g = ResidualGraph(2 * n + 2)
    pairs: list[tuple[int, int]] = []  # mirror arc ids

    def add_pair(u, v, mu, mv, cost):
        if cost <= 0:
            return
        c = quantize(cost / 2.0, quantum)
        if c > 0:
            pairs.append((g.add_edge(u, v, c), g.add_edge(mu, mv, c)))

    d = unary[:, 1] - unary[:, 0]
    edges = []
    for i, j, tab in pairwise:
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise ConfigError(f"invalid pairwise term ({i}, {j})")
        a, b, c, e = _table(tab).ravel()
        d[i] += c - a
        d[j] += e - c
        w = b + c - a - e
        if w < 0:
            d[j] += w
        edges.append((i, j, w))

    for i in range(n):
        if d[i] > 0:
            add_pair(s, i, n + i, t, d[i])
        elif d[i] < 0:
            add_pair(i, t, s, n + i, -d[i])
    for i, j, w in edges:
        if w > 0:
            add_pair(i, j, n + j, n + i, w)
        elif w < 0:
            add_pair(n + i, j, n + j, i, -w)

    g.max_flow(s, t)
    _symmetrize(g, pairs)

    # implication graph: residual arcs plus t -> s
    succ: list[list[int]] = [[] for _ in range(2 * n + 2)]
    for e, v in enumerate(g.head):
        if g.cap[e] > 0:
            succ[g.head[e ^ 1]].append(v)
    succ[t].append(s)
    comp = _scc(succ)

    labels = np.full(n, UNLABELED, dtype=np.int8)
    for i in range(n):
        # Tarjan numbers components in reverse topological order
        if comp[i] < comp[n + i]:
            labels[i] = 0
        elif comp[i] > comp[n + i]:
            labels[i] = 1
    return PartialLabeling(labels)


def _symmetrize(g: ResidualGraph, pairs: Sequence[tuple[int, int]]) -> None:
    """Replace the flow on each mirror pair by the sum of both flows over doubled capacity."""
    for e, m in pairs:
        cap = g.cap[e] + g.cap[e ^ 1]
        flow = g.cap[e ^ 1] + g.cap[m ^ 1]
        g.cap[e] = g.cap[m] = 2 * cap - flow
        g.cap[e ^ 1] = g.cap[m ^ 1] = flow


def _scc(succ: list[list[int]]) -> list[int]:
    """Iterative Tarjan; component ids follow completion order (sinks first)."""
    n = len(succ)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    comp = [-1] * n
    stack: list[int] = []
    counter = 0
    n_comp = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, k = work[-1]
            if k < len(succ[v]):
                work[-1] = (v, k + 1)
                w = succ[v][k]
                if index[w] == -1:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w]:
                    low[v] = min(low[v], index[w])
                continue
            work.pop()
            if work:
                u = work[-1][0]
                low[u] = min(low[u], low[v])
            if low[v] == index[v]:
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp[w] = n_comp
                    if w == v:
                        break
                n_comp += 1
    return comp


def binary_energy(states: np.ndarray, unary: np.ndarray, pairwise) -> np.ndarray:
    """Energies of the rows of ``states`` (m, n) under the same terms :func:`qpbo` takes."""
    states = np.asarray(states, dtype=np.intp)
    unary = np.asarray(unary, dtype=float)
    cols = np.arange(unary.shape[0])
    e = unary[cols, states].sum(axis=-1)
    for i, j, tab in pairwise:
        e = e + _table(tab)[states[..., i], states[..., j]]
    return e


def complete_labeling(
    partial: PartialLabeling,
    unary: np.ndarray,
    pairwise,
    max_enumerate: int = 16,
) -> np.ndarray:
    """Fill the unlabeled variables of ``partial``.

    Up to ``max_enumerate`` unlabeled variables are searched exhaustively
    (lowest-index assignment wins ties); beyond that, iterated conditional
    modes starting from zero fills them.
    """
    pairwise = list(pairwise)
    labels = partial.labels.astype(np.intp)
    free = partial.unlabeled
    if free.size == 0:
        return labels
    if free.size <= max_enumerate:
        combos = np.array(list(itertools.product((0, 1), repeat=free.size)), dtype=np.intp)
        states = np.repeat(labels[None, :], len(combos), axis=0)
        states[:, free] = combos
        return states[int(np.argmin(binary_energy(states, unary, pairwise)))]
    labels[free] = 0
    changed = True
    while changed:
        changed = False
        for i in free:
            trial = np.repeat(labels[None, :], 2, axis=0)
            trial[:, i] = (0, 1)
            e = binary_energy(trial, unary, pairwise)
            best = int(np.argmin(e))
            if best != labels[i] and e[best] < e[labels[i]]:
                labels[i] = best
                changed = True
    return labels

"""Max-flow / min-cut by shortest augmenting paths (Edmonds-Karp).

Capacities are quantized to integer multiples of ``quantum`` so that the
augmentation is exact and the result is deterministic for a fixed arc order.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from roadlayout.errors import ConfigError

DEFAULT_QUANTUM = 1e-6


class ResidualGraph:
    """Integer-capacity residual graph; arc ``e`` and ``e ^ 1`` are a forward/backward pair."""

    def __init__(self, n_nodes: int):
        self.n = n_nodes
        self.adj: list[list[int]] = [[] for _ in range(n_nodes)]
        self.head: list[int] = []
        self.cap: list[int] = []

    def add_edge(self, u: int, v: int, cap: int) -> int:
        """Add arc ``u -> v``; returns its id (the reverse arc is ``id ^ 1``)."""
        if cap < 0:
            raise ValueError("capacities must be nonnegative")
        e = len(self.head)
        self.head += [v, u]
        self.cap += [cap, 0]
        self.adj[u].append(e)
        self.adj[v].append(e + 1)
        return e

    def tail(self, e: int) -> int:
        return self.head[e ^ 1]

    def max_flow(self, s: int, t: int) -> int:
        if s == t:
            raise ValueError("source and sink must differ")
        head, cap, adj = self.head, self.cap, self.adj
        total = 0
        while True:
            parent = [-1] * self.n
            parent[s] = -2
            queue = deque([s])
            while queue and parent[t] == -1:
                u = queue.popleft()
                for e in adj[u]:
                    v = head[e]
                    if cap[e] > 0 and parent[v] == -1:
                        parent[v] = e
                        queue.append(v)
            if parent[t] == -1:
                return total
            push = None
            v = t
            while v != s:
                e = parent[v]
                push = cap[e] if push is None else min(push, cap[e])
                v = head[e ^ 1]
            v = t
            while v != s:
                e = parent[v]
                cap[e] -= push
                cap[e ^ 1] += push
                v = head[e ^ 1]
            total += push

    def reachable(self, s: int) -> list[bool]:
        """Nodes reachable from ``s`` through arcs with positive residual capacity."""
        seen = [False] * self.n
        seen[s] = True
        stack = [s]
        while stack:
            u = stack.pop()
            for e in self.adj[u]:
                v = self.head[e]
                if self.cap[e] > 0 and not seen[v]:
                    seen[v] = True
                    stack.append(v)
        return seen


@dataclass
class FlowNetwork:
    """Directed network with nonnegative real capacities."""

    n_nodes: int
    source: int
    sink: int
    arcs: list[tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        if not (0 <= self.source < self.n_nodes and 0 <= self.sink < self.n_nodes):
            raise ConfigError("source and sink must be valid node ids")
        if self.source == self.sink:
            raise ConfigError("source and sink must differ")

    def add_arc(self, u: int, v: int, capacity: float) -> None:
        if capacity < 0:
            raise ConfigError("capacities must be nonnegative")
        if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
            raise ConfigError(f"arc ({u}, {v}) references an unknown node")
        self.arcs.append((u, v, float(capacity)))


@dataclass(frozen=True)
class FlowResult:
    value: float
    source_side: tuple[bool, ...]

    def cut_arcs(self, net: FlowNetwork) -> list[tuple[int, int, float]]:
        side = self.source_side
        return [(u, v, c) for u, v, c in net.arcs if side[u] and not side[v]]


def quantize(capacity: float, quantum: float = DEFAULT_QUANTUM) -> int:
    return int(round(capacity / quantum))


def max_flow(net: FlowNetwork, quantum: float = DEFAULT_QUANTUM) -> FlowResult:
    """Maximum s-t flow and the minimum cut whose source side is smallest.

    ``source_side[v]`` is true for nodes still reachable from the source in
    the final residual graph.
    """
    g = ResidualGraph(net.n_nodes)
    for u, v, c in net.arcs:
        g.add_edge(u, v, quantize(c, quantum))
    flow = g.max_flow(net.source, net.sink)
    return FlowResult(flow * quantum, tuple(g.reachable(net.source)))

"""MAP inference for :class:`~roadlayout.crf.EnergyModel`.

Single frames are solved by block coordinate descent:

* the binary block is solved jointly with QPBO, after folding every other
  variable's current value into its costs; unlabeled variables are completed
  exhaustively (greedy sweeps when there are too many), and cliques over
  three or more binaries are handled by conditioning on their extra members;
* every other discrete variable is optimized jointly with the binaries it
  shares a constraint with.

Variables whose only factors are constraints with a single controlling
variable (lane widths under a lane count, a distance under a side-road flag)
are *leaves*: blocks minimize them out exactly instead of holding them fixed,
so a flag and the value it gates always move together.

Sequences alternate exact chain dynamic programs per attribute with
single-frame block descent that sees the neighbouring frames as fixed.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from roadlayout.crf import EnergyModel, Labeling, energy_of, frame_energy
from roadlayout.errors import ConfigError, InstanceTooLargeError
from roadlayout.inference.qpbo import binary_energy, complete_labeling, qpbo
from roadlayout.rng import CounterRNG, split

DEFAULT_RESTARTS = 10
MAX_ITERATIONS = 50
MAX_PASSES = 10
MAX_EXACT_STATES = 2**24
PERTURB_RATE = 0.25
# conditioning on more clique members than this is refused
MAX_SPLIT = 8
# joint blocks larger than this fall back to single-variable updates
MAX_BLOCK_STATES = 4096


def _improves(new: float, old: float) -> bool:
    return new < old - 1e-9 * max(1.0, abs(old))


def _embed(table, members, axes_of, domains, x, n_axes):
    """Broadcastable view of ``table`` over the free axes it touches.

    ``members`` are the table's variables; a variable with an entry in
    ``axes_of`` becomes an axis ranging over its domain, any other variable
    is held at ``x[v]``.
    """
    if len(members) == 1:
        (v,) = members
        if v not in axes_of:
            return float(table[x[v]])
        shape = [1] * n_axes
        shape[axes_of[v]] = len(domains[v])
        return table[domains[v]].reshape(shape)
    fixed = tuple(slice(None) if v in axes_of else x[v] for v in members)
    sub = table[fixed]
    free = [v for v in members if v in axes_of]
    if not free:
        return float(sub)
    sub = sub[np.ix_(*(domains[v] for v in free))]
    order = np.argsort([axes_of[v] for v in free])
    sub = np.transpose(sub, order)
    shape = [1] * n_axes
    for v in free:
        shape[axes_of[v]] = len(domains[v])
    return sub.reshape(shape)


class _FrameSolver:
    """Descent machinery for one frame, given its unary tables."""

    def __init__(self, model: EnergyModel, unary: Sequence[np.ndarray]):
        self.model = model
        self.unary = unary
        self.domains = [np.asarray(d, dtype=np.intp) for d in model.domains]
        n = model.n_vars
        pairs_of = [fs[0] for fs in model.factors_of]
        cliques_of = [fs[1] for fs in model.factors_of]
        self.const = [len(d) == 1 for d in model.domains]

        # leaves: non-binary variables tied to exactly one other free variable
        # and only through constraints
        self.leaf_of = [None] * n
        for v in range(n):
            if model.kinds[v] == "binary" or self.const[v] or pairs_of[v]:
                continue
            others = {
                u for k in cliques_of[v] for u in model.cliques[k].variables if u != v
            } - {u for u in range(n) if self.const[u]}
            if len(others) == 1:
                (c,) = others
                if all(set(model.cliques[k].variables) == {v, c} for k in cliques_of[v]):
                    self.leaf_of[v] = c
        # a controller cannot itself be a leaf
        for v in range(n):
            c = self.leaf_of[v]
            if c is not None and self.leaf_of[c] is not None:
                self.leaf_of[v] = None
        self.leaves = [[] for _ in range(n)]
        for v, c in enumerate(self.leaf_of):
            if c is not None:
                self.leaves[c].append(v)

        self.free_binary = [
            v for v in range(n)
            if model.kinds[v] == "binary" and not self.const[v] and self.leaf_of[v] is None
        ]
        fb = set(self.free_binary)
        others = [
            v for v in range(n)
            if v not in fb and not self.const[v] and self.leaf_of[v] is None
        ]
        self.blocks = []
        for v in others:
            partners = sorted(
                {
                    u for k in cliques_of[v] for u in model.cliques[k].variables
                    if u in fb
                }
            )
            block = [v] + partners
            if np.prod([len(self.domains[u]) for u in block]) > MAX_BLOCK_STATES:
                block = [v]
            self.blocks.append(block)

        # leaf tables: cost[controller value, leaf value] for the leaf's own factors
        self.leaf_cost = {}
        for v, c in enumerate(self.leaf_of):
            if c is None:
                continue
            cost = np.broadcast_to(unary[v][None, :], (model.sizes[c], model.sizes[v])).copy()
            for k in cliques_of[v]:
                cl = model.cliques[k]
                t = cl.conflict if cl.variables[0] == c else cl.conflict.T
                cost += model.penalty * t
            sub = cost[:, self.domains[v]]
            self.leaf_cost[v] = (sub.min(axis=1), self.domains[v][sub.argmin(axis=1)])

        # variables outside the binary block whose values its costs depend on
        ctx = set()
        for v in self.free_binary:
            for k in pairs_of[v]:
                p = model.pairwise[k]
                ctx.update((p.i, p.j))
            for k in cliques_of[v]:
                ctx.update(model.cliques[k].variables)
        self.binary_context = sorted(
            u for u in ctx if u not in fb and not self.const[u] and self.leaf_of[u] is None
        )
        self._binary_cache: dict = {}
        self.pairs_of = pairs_of
        self.cliques_of = cliques_of

    # -- local energies ---------------------------------------------------

    def local_energy(self, varset, x) -> float:
        """Energy of every factor touching ``varset`` at ``x``."""
        m = self.model
        e = sum(float(self.unary[v][x[v]]) for v in varset)
        pk = {k for v in varset for k in self.pairs_of[v]}
        ck = {k for v in varset for k in self.cliques_of[v]}
        for k in pk:
            p = m.pairwise[k]
            e += float(p.cost[x[p.i], x[p.j]])
        for k in ck:
            c = m.cliques[k]
            if c.conflict[tuple(x[v] for v in c.variables)]:
                e += m.penalty
        return e

    def _cliques_touching(self, block) -> list[int]:
        """Cliques on ``block`` except those of leaves that get minimized out."""
        eliminated = {lv for v in block for lv in self.leaves[v]}
        ks = {k for v in block for k in self.cliques_of[v]}
        return sorted(
            k for k in ks if not eliminated.intersection(self.model.cliques[k].variables)
        )

    def with_leaves(self, block) -> list[int]:
        return list(block) + [lv for v in block for lv in self.leaves[v]]

    def set_leaves(self, x, block) -> None:
        for v in block:
            for lv in self.leaves[v]:
                x[lv] = int(self.leaf_cost[lv][1][x[v]])

    def block_tensor(self, block, x) -> np.ndarray:
        """Local energy over the joint domain of ``block`` (leaves minimized out)."""
        m = self.model
        axes_of = {v: a for a, v in enumerate(block)}
        n_axes = len(block)
        dom = self.domains
        total = np.zeros([len(dom[v]) for v in block])
        for v in block:
            total = total + _embed(self.unary[v], (v,), axes_of, dom, x, n_axes)
            for lv in self.leaves[v]:
                total = total + _embed(self.leaf_cost[lv][0], (v,), axes_of, dom, x, n_axes)
        pk = sorted({k for v in block for k in self.pairs_of[v]})
        ck = self._cliques_touching(block)
        for k in pk:
            p = m.pairwise[k]
            total = total + _embed(p.cost, (p.i, p.j), axes_of, dom, x, n_axes)
        for k in ck:
            c = m.cliques[k]
            hit = _embed(c.conflict, c.variables, axes_of, dom, x, n_axes)
            total = total + m.penalty * np.asarray(hit, dtype=float)
        return total

    # -- blocks -----------------------------------------------------------

    def solve_block(self, block, x) -> bool:
        """Exact joint update of ``block`` plus its leaves; true if ``x`` changed."""
        tensor = self.block_tensor(block, x)
        flat = int(np.argmin(tensor))
        best = float(tensor.flat[flat])
        scope = self.with_leaves(block)
        if not _improves(best, self.local_energy(scope, x)):
            return False
        idx = np.unravel_index(flat, tensor.shape)
        for v, i in zip(block, idx):
            x[v] = int(self.domains[v][i])
        self.set_leaves(x, block)
        return True

    def solve_leaf(self, v, x) -> bool:
        """Move leaf ``v`` to its best value given its controller."""
        best = int(self.leaf_cost[v][1][x[self.leaf_of[v]]])
        if best == x[v]:
            return False
        old = self.local_energy([v], x)
        y = list(x)
        y[v] = best
        if not _improves(self.local_energy([v], y), old):
            return False
        x[v] = best
        return True

    def solve_binary_block(self, x) -> bool:
        if not self.free_binary:
            return False
        key = tuple(x[v] for v in self.binary_context)
        labels = self._binary_cache.get(key)
        if labels is None:
            labels = self._binary_minimizer(x)
            self._binary_cache[key] = labels
        scope = self.with_leaves(self.free_binary)
        old = self.local_energy(scope, x)
        y = list(x)
        for v, a in zip(self.free_binary, labels):
            y[v] = int(a)
        self.set_leaves(y, self.free_binary)
        if not _improves(self.local_energy(scope, y), old):
            return False
        x[:] = y
        return True

    def _binary_minimizer(self, x) -> np.ndarray:
        """Joint minimizer of the binary block with all other variables at ``x``."""
        m = self.model
        fb = self.free_binary
        pos = {v: i for i, v in enumerate(fb)}
        n = len(fb)
        unary = np.zeros((n, 2))
        terms = []  # (local vars, cost table over them)
        for v in fb:
            unary[pos[v]] += self.unary[v]
            for lv in self.leaves[v]:
                unary[pos[v]] += self.leaf_cost[lv][0]
        for k in sorted({k for v in fb for k in self.pairs_of[v]}):
            p = m.pairwise[k]
            terms.append(((p.i, p.j), p.cost))
        for k in self._cliques_touching(fb):
            c = m.cliques[k]
            terms.append((c.variables, m.penalty * c.conflict.astype(float)))

        reduced = []
        split_vars: list[int] = []
        for vars_, table in terms:
            idx = tuple(slice(None) if v in pos else x[v] for v in vars_)
            free = tuple(pos[v] for v in vars_ if v in pos)
            sub = np.asarray(table[idx], dtype=float)
            if len(free) == 1:
                unary[free[0]] += sub
            elif len(free) >= 2:
                reduced.append((free, sub))
                split_vars.extend(f for f in free[:-2] if f not in split_vars)
        if len(split_vars) > MAX_SPLIT:
            raise InstanceTooLargeError("too many binaries inside higher-order constraints")

        best_labels, best_e = None, np.inf
        for assign in itertools.product((0, 1), repeat=len(split_vars)):
            fixed = dict(zip(split_vars, assign))
            u = unary.copy()
            pairs = []
            const = 0.0
            for free, sub in reduced:
                idx = tuple(fixed.get(f, slice(None)) for f in free)
                rest = tuple(f for f in free if f not in fixed)
                t = sub[idx]
                if len(rest) == 0:
                    const += float(t)
                elif len(rest) == 1:
                    u[rest[0]] += t
                else:
                    pairs.append((rest[0], rest[1], t))
            active = [i for i in range(n) if i not in fixed]
            remap = {f: i for i, f in enumerate(active)}
            su = u[active]
            sp = [(remap[i], remap[j], t) for i, j, t in pairs]
            sub_labels = complete_labeling(qpbo(su, sp), su, sp)
            labels = np.empty(n, dtype=np.intp)
            labels[active] = sub_labels
            for f, a in fixed.items():
                labels[f] = a
            e = float(binary_energy(sub_labels[None], su, sp)[0]) + const
            e += sum(unary[f, a] for f, a in fixed.items())
            if e < best_e:
                best_labels, best_e = labels, e
        return best_labels

    def descend(self, x, max_iter: int = MAX_ITERATIONS) -> int:
        """Block coordinate descent in place; returns the number of sweeps."""
        for it in range(1, max_iter + 1):
            changed = self.solve_binary_block(x)
            for block in self.blocks:
                changed |= self.solve_block(block, x)
            for v, c in enumerate(self.leaf_of):
                if c is not None:
                    changed |= self.solve_leaf(v, x)
            if not changed:
                return it
        return max_iter


@dataclass(frozen=True)
class InferenceResult:
    """Solver output plus diagnostics.

    ``labelings`` holds one labeling per frame.
    """

    labelings: tuple[Labeling, ...]
    initial_energy: float
    final_energy: float
    iterations: int
    restarts_used: int

    @property
    def labeling(self) -> Labeling:
        return self.labelings[0]

    def to_dict(self) -> dict:
        return {
            "initial_energy": self.initial_energy,
            "final_energy": self.final_energy,
            "iterations": self.iterations,
            "restarts_used": self.restarts_used,
        }


def unary_argmax(model: EnergyModel, t: int = 0) -> list[int]:
    """Per-variable minimum-unary value within each domain (lowest value on ties)."""
    out = []
    for u, d in zip(model.unaries[t], model.domains):
        d = np.asarray(d)
        out.append(int(d[np.argmin(u[d])]))
    return out


def _project(model: EnergyModel, values) -> list[int]:
    x = []
    for v, d in zip(values, model.domains):
        v = int(v)
        x.append(v if v in d else min(d, key=lambda a: (abs(a - v), a)))
    return x


def _starts(model: EnergyModel, init, restarts: int, seed: int) -> list[list[int]]:
    base = unary_argmax(model)
    starts = []
    if init is not None:
        starts.append(_project(model, init))
    starts.append(base)
    r = 0
    while len(starts) < restarts and r < 4 * restarts:
        rng = CounterRNG(split(seed, r))
        r += 1
        x = list(base)
        for v, d in enumerate(model.domains):
            if model.kinds[v] in ("binary", "multiclass", "discrete") and len(d) > 1:
                if rng.uniform() < PERTURB_RATE:
                    x[v] = d[rng.randint(len(d))]
        starts.append(x)
    unique = []
    for s in starts:
        if s not in unique:
            unique.append(s)
    return unique[:max(restarts, 1)]


def optimize_frame(
    model: EnergyModel,
    init: Labeling | Sequence[int] | None = None,
    *,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    max_iter: int = MAX_ITERATIONS,
) -> InferenceResult:
    """Single-frame descent from several starts; the lowest energy wins (earliest on ties)."""
    if model.n_frames != 1:
        raise ConfigError("optimize_frame expects a single-frame model")
    if restarts < 1:
        raise ConfigError("restarts must be at least 1")
    solver = _FrameSolver(model, model.unaries[0])
    starts = _starts(model, None if init is None else list(init), restarts, seed)
    initial = frame_energy(model, starts[0])
    best, best_e, best_it = None, np.inf, 0
    for s in starts:
        x = list(s)
        it = solver.descend(x, max_iter)
        e = frame_energy(model, x)
        if e < best_e:
            best, best_e, best_it = x, e, it
    return InferenceResult((Labeling(best),), initial, best_e, best_it, len(starts))


def minimize_energy(
    model: EnergyModel,
    init: Labeling | Sequence[int] | None = None,
    *,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> Labeling:
    """Low-energy labeling of a single-frame model.

    The result never has higher energy than ``init`` (or the per-variable
    argmax when ``init`` is omitted).
    """
    return optimize_frame(model, init, restarts=restarts, seed=seed).labeling


def minimize_energy_exact(model: EnergyModel, max_states: int = MAX_EXACT_STATES):
    """Global minimizer by enumeration over the variables' domains.

    Works for single frames and short sequences. Ties resolve to the
    lexicographically smallest assignment (frame-major, then variable order).
    Returns a :class:`Labeling` for one frame, a list of labelings otherwise.

    Raises:
        InstanceTooLargeError: more than ``max_states`` joint states.
    """
    T, n = model.n_frames, model.n_vars
    doms = [np.asarray(d, dtype=np.intp) for d in model.domains]
    states = 1
    for _ in range(T):
        for d in doms:
            states *= len(d)
    if states > max_states:
        raise InstanceTooLargeError(f"{states} joint states exceed the limit of {max_states}")
    # global variable id g = t * n + v
    free = [t * n + v for t in range(T) for v in range(n) if len(doms[v]) > 1]
    if len(free) > 60:
        raise InstanceTooLargeError("too many free variables for dense enumeration")
    axes_of = {g: a for a, g in enumerate(free)}
    gdoms = {t * n + v: doms[v] for t in range(T) for v in range(n)}
    base = {t * n + v: int(doms[v][0]) for t in range(T) for v in range(n)}
    n_axes = len(free)
    total = np.zeros([len(gdoms[g]) for g in free])

    def add(table, members, scale=1.0):
        nonlocal total
        term = _embed(table, members, axes_of, gdoms, base, n_axes)
        total = total + scale * np.asarray(term, dtype=float)

    for t in range(T):
        off = t * n
        for v in range(n):
            add(model.unaries[t][v], (off + v,))
        for p in model.pairwise:
            add(p.cost, (off + p.i, off + p.j))
        for c in model.cliques:
            add(c.conflict, tuple(off + v for v in c.variables), model.penalty)
        if model.temporal is not None and t + 1 < T:
            for v in range(n):
                add(model.temporal[v], (off + v, off + n + v))
    flat = int(np.argmin(total)) if n_axes else 0
    idx = np.unravel_index(flat, total.shape) if n_axes else ()
    values = dict(base)
    for g, i in zip(free, idx):
        values[g] = int(gdoms[g][i])
    frames = [Labeling(tuple(values[t * n + v] for v in range(n))) for t in range(T)]
    return frames[0] if T == 1 else frames


# -- sequences ----------------------------------------------------------------


def _temporal_is_zero(model: EnergyModel) -> bool:
    return model.temporal is None or all(not np.any(t) for t in model.temporal)


def _folded_unaries(model: EnergyModel, xs, t) -> list[np.ndarray]:
    """Frame ``t`` unaries plus transition costs to the neighbouring frames' current values."""
    out = []
    for v in range(model.n_vars):
        u = np.array(model.unaries[t][v], dtype=float)
        tab = model.temporal[v]
        if t > 0:
            u += tab[xs[t - 1][v], :]
        if t + 1 < model.n_frames:
            u += tab[:, xs[t + 1][v]]
        out.append(u)
    return out


def _chain_update(model: EnergyModel, solvers, xs, v) -> bool:
    """Exact Viterbi over variable ``v`` (with its leaves) across all frames."""
    T = model.n_frames
    leaves = solvers[0].leaves[v]
    group = [v] + leaves
    cand_vals, cand_cost = [], []
    for t in range(T):
        s, x = solvers[t], xs[t]
        scope = group
        cands = []
        for a in s.domains[v]:
            y = list(x)
            y[v] = int(a)
            s.set_leaves(y, [v])
            cands.append(tuple(y[u] for u in group))
        current = tuple(x[u] for u in group)
        if current not in cands:
            cands.append(current)
        costs = []
        for c in cands:
            y = list(x)
            for u, a in zip(group, c):
                y[u] = a
            costs.append(s.local_energy(scope, y))
        cand_vals.append(np.asarray(cands, dtype=np.intp))
        cand_cost.append(np.asarray(costs))

    def trans(t):
        a, b = cand_vals[t], cand_vals[t + 1]
        m = np.zeros((len(a), len(b)))
        for k, u in enumerate(group):
            m += model.temporal[u][a[:, k][:, None], b[:, k][None, :]]
        return m

    trans_tables = [trans(t) for t in range(T - 1)]
    cur_idx = [
        next(i for i, c in enumerate(cand_vals[t]) if tuple(c) == tuple(xs[t][u] for u in group))
        for t in range(T)
    ]
    cur = sum(cand_cost[t][cur_idx[t]] for t in range(T)) + sum(
        trans_tables[t][cur_idx[t], cur_idx[t + 1]] for t in range(T - 1)
    )
    score = cand_cost[0].copy()
    back = []
    for t in range(1, T):
        m = score[:, None] + trans_tables[t - 1]
        back.append(np.argmin(m, axis=0))
        score = m.min(axis=0) + cand_cost[t]
    k = int(np.argmin(score))
    if not _improves(float(score[k]), float(cur)):
        return False
    path = [k]
    for b in reversed(back):
        path.append(int(b[path[-1]]))
    path.reverse()
    for t, k in enumerate(path):
        for u, a in zip(group, cand_vals[t][k]):
            xs[t][u] = int(a)
    return True


def optimize_sequence(
    model: EnergyModel,
    init: Sequence[Labeling] | None = None,
    *,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    max_passes: int = MAX_PASSES,
) -> InferenceResult:
    """Temporal inference with diagnostics; see :func:`minimize_temporal`."""
    T = model.n_frames
    if init is not None and len(init) != T:
        raise ConfigError(f"expected {T} initial labelings, got {len(init)}")
    frames = [
        optimize_frame(model.frame(t), None if init is None else init[t], restarts=restarts, seed=seed)
        for t in range(T)
    ]
    xs = [list(f.labeling.values) for f in frames]
    if init is not None:
        initial = energy_of(model, [list(lab) for lab in init])
    else:
        initial = energy_of(model, [unary_argmax(model, t) for t in range(T)])
    iterations = max(f.iterations for f in frames)
    if T == 1 or _temporal_is_zero(model):
        return InferenceResult(
            tuple(Labeling(x) for x in xs), initial, energy_of(model, xs), iterations,
            frames[0].restarts_used,
        )
    solvers = [_FrameSolver(model, model.unaries[t]) for t in range(T)]
    chain_vars = [v for v in range(model.n_vars) if solvers[0].leaf_of[v] is None]
    leaf_vars = [v for v in range(model.n_vars) if solvers[0].leaf_of[v] is not None]
    passes = 0
    for passes in range(1, max_passes + 1):
        changed = False
        for v in chain_vars:
            if len(model.domains[v]) > 1:
                changed |= _chain_update(model, solvers, xs, v)
        for v in leaf_vars:
            if len(model.domains[v]) > 1:
                changed |= _single_chain(model, solvers, xs, v)
        for t in range(T):
            folded = _FrameSolver(model, _folded_unaries(model, xs, t))
            x = list(xs[t])
            before = folded.local_energy(range(model.n_vars), x)
            folded.descend(x)
            if _improves(folded.local_energy(range(model.n_vars), x), before):
                xs[t] = x
                changed = True
        if not changed:
            break
    return InferenceResult(
        tuple(Labeling(x) for x in xs), initial, energy_of(model, xs), iterations + passes,
        frames[0].restarts_used,
    )


def _single_chain(model, solvers, xs, v) -> bool:
    """Viterbi over a leaf variable alone (its controller held fixed)."""
    T = model.n_frames
    dom = solvers[0].domains[v]
    costs = [np.array([_with(solvers[t], xs[t], v, a) for a in dom]) for t in range(T)]
    tab = model.temporal[v][np.ix_(dom, dom)]
    pos = {int(a): i for i, a in enumerate(dom)}
    cur_idx = [pos[xs[t][v]] for t in range(T)]
    cur = sum(costs[t][cur_idx[t]] for t in range(T)) + sum(
        tab[cur_idx[t], cur_idx[t + 1]] for t in range(T - 1)
    )
    score = costs[0].copy()
    back = []
    for t in range(1, T):
        m = score[:, None] + tab
        back.append(np.argmin(m, axis=0))
        score = m.min(axis=0) + costs[t]
    k = int(np.argmin(score))
    if not _improves(float(score[k]), float(cur)):
        return False
    path = [k]
    for b in reversed(back):
        path.append(int(b[path[-1]]))
    path.reverse()
    for t, k in enumerate(path):
        xs[t][v] = int(dom[k])
    return True


def _with(solver, x, v, a) -> float:
    y = list(x)
    y[v] = int(a)
    return solver.local_energy([v], y)


def minimize_temporal(
    model: EnergyModel,
    init: Sequence[Labeling] | None = None,
    *,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> list[Labeling]:
    """Low-energy labelings for every frame of a (possibly temporal) model.

    Frames are first solved independently. With nonzero transition costs,
    chain dynamic programs and single-frame blocks then alternate until no
    move lowers the total energy, for at most :data:`MAX_PASSES` passes.
    """
    return list(optimize_sequence(model, init, restarts=restarts, seed=seed).labelings)

"""Attribute predictions, labelings and the scene CRF energy.

Every attribute is one discrete variable: binaries take {0, 1}, lane counts
take 0..6 and continuous attributes take a bin index (index 0 is the inactive
bin for activatable ones). The energy of a labeling is

* a unary term ``-log p`` per variable,
* a co-occurrence cost for every unordered pair of binaries,
* a penalty for every violated feasibility rule of the schema,
* for sequences, a transition cost between consecutive frames.
"""

from __future__ import annotations

import functools
import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from roadlayout.errors import ConfigError, ParseError, PredictionError, SchemaMismatchError
from roadlayout.probability import (
    INACTIVE,
    BinSpec,
    bin_specs,
    decode_expectation,
    discretize,
)
from roadlayout.sampler import CooccurrenceTables
from roadlayout.schema import SCHEMA_VERSION, AttributeSchema, SceneParams, default_schema

PROB_FLOOR = 1e-9
DEFAULT_PENALTY = 1e9
NORMALIZATION_TOL = 1e-9
# half-width (in bins) of the window used to refine a chosen bin into a value
REFINE_WINDOW = 3


def _prob_vector(x, what: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.ndim != 1 or np.isnan(v).any() or (v < 0).any():
        raise PredictionError(f"{what}: expected a nonnegative vector without NaN")
    if abs(v.sum() - 1.0) > NORMALIZATION_TOL:
        raise PredictionError(f"{what}: weights sum to {v.sum()!r}, expected 1")
    return v


@dataclass(frozen=True, eq=False)
class AttributePrediction:
    """Per-attribute probabilities for one frame.

    Attributes:
        binary: (14,) probabilities that each flag is true.
        multiclass: one (7,) class distribution per lane count.
        continuous: one bin distribution per continuous attribute.
    """

    binary: np.ndarray
    multiclass: tuple[np.ndarray, ...]
    continuous: tuple[np.ndarray, ...]

    def __post_init__(self):
        schema = default_schema()
        b = np.asarray(self.binary, dtype=float)
        if b.shape != (schema.n_binary,):
            raise SchemaMismatchError(f"expected {schema.n_binary} binary probabilities")
        if np.isnan(b).any() or (b < 0).any() or (b > 1).any():
            raise PredictionError("binary probabilities must lie in [0, 1]")
        if len(self.multiclass) != schema.n_multiclass:
            raise SchemaMismatchError(f"expected {schema.n_multiclass} class distributions")
        if len(self.continuous) != schema.n_continuous:
            raise SchemaMismatchError(f"expected {schema.n_continuous} bin distributions")
        mc = tuple(_prob_vector(m, n) for m, n in zip(self.multiclass, schema.multiclass_names))
        for m, size, name in zip(mc, schema.multiclass_sizes, schema.multiclass_names):
            if m.shape != (size,):
                raise SchemaMismatchError(f"{name}: expected {size} classes")
        cont = tuple(_prob_vector(c, n) for c, n in zip(self.continuous, schema.continuous_names))
        object.__setattr__(self, "binary", b)
        object.__setattr__(self, "multiclass", mc)
        object.__setattr__(self, "continuous", cont)

    def __eq__(self, other):
        if not isinstance(other, AttributePrediction):
            return NotImplemented
        return (
            np.array_equal(self.binary, other.binary)
            and all(np.array_equal(a, b) for a, b in zip(self.multiclass, other.multiclass))
            and all(np.array_equal(a, b) for a, b in zip(self.continuous, other.continuous))
        )

    def check_bins(self, specs: Sequence[BinSpec]) -> None:
        """Raise unless every continuous distribution matches its bin spec."""
        names = default_schema().continuous_names
        for c, spec, name in zip(self.continuous, specs, names):
            if c.shape != (spec.size,):
                raise SchemaMismatchError(f"{name}: expected {spec.size} bins, got {c.shape[0]}")

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "binary": self.binary.tolist(),
            "multiclass": [m.tolist() for m in self.multiclass],
            "continuous": [c.tolist() for c in self.continuous],
        }

    @classmethod
    def from_record(cls, doc: Mapping) -> "AttributePrediction":
        if not isinstance(doc, Mapping):
            raise ParseError("prediction record must be a JSON object")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ParseError(
                f"unsupported schema_version {doc.get('schema_version')!r}", field="schema_version"
            )
        for key in ("binary", "multiclass", "continuous"):
            if key not in doc:
                raise ParseError(f"missing field {key}", field=key)
        try:
            return cls(
                np.asarray(doc["binary"], dtype=float),
                tuple(np.asarray(m, dtype=float) for m in doc["multiclass"]),
                tuple(np.asarray(c, dtype=float) for c in doc["continuous"]),
            )
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def from_json(cls, text: str) -> "AttributePrediction":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}") from exc
        return cls.from_record(doc)


def write_predictions(path, preds: Iterable[AttributePrediction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(p.to_json() + "\n")


def read_predictions(path) -> list[AttributePrediction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(AttributePrediction.from_json(line))
            except ParseError as exc:
                raise ParseError(exc.message, field=exc.field, line=lineno) from exc
            except (SchemaMismatchError, PredictionError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
    return out


def onehot_prediction(params: SceneParams, specs: Sequence[BinSpec] | None = None):
    """Fully confident prediction of ``params`` (continuous values soft-labeled)."""
    specs = specs or bin_specs()
    schema = default_schema()
    mc = []
    for v, size in zip(params.multiclass, schema.multiclass_sizes):
        m = np.zeros(size)
        m[v] = 1.0
        mc.append(m)
    cont = tuple(discretize(v, s).weights for v, s in zip(params.continuous, specs))
    return AttributePrediction(np.asarray(params.binary, dtype=float), tuple(mc), cont)


def decode_prediction(pred: AttributePrediction, specs: Sequence[BinSpec] | None = None):
    """Hard decode without any consistency reasoning.

    Binaries are true above 0.5, lane counts take their argmax and continuous
    attributes their expectation decode. The result may be infeasible.
    """
    specs = specs or bin_specs()
    return SceneParams(
        tuple(bool(p > 0.5) for p in pred.binary),
        tuple(int(np.argmax(m)) for m in pred.multiclass),
        tuple(decode_expectation(c, s) for c, s in zip(pred.continuous, specs)),
    )


@dataclass(frozen=True)
class Labeling:
    """One value index per attribute, in schema order."""

    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]

    @classmethod
    def from_params(cls, params: SceneParams, specs: Sequence[BinSpec] | None = None):
        specs = specs or bin_specs()
        cont = (s.index_of(v) for v, s in zip(params.continuous, specs))
        return cls(tuple(int(b) for b in params.binary) + params.multiclass + tuple(cont))

    def to_params(
        self,
        specs: Sequence[BinSpec] | None = None,
        pred: AttributePrediction | None = None,
    ) -> SceneParams:
        """Convert to scene values.

        A continuous bin becomes its center, or, when ``pred`` is given, the
        prediction's mean over the active bins within :data:`REFINE_WINDOW`
        of the chosen bin.
        """
        specs = specs or bin_specs()
        schema = default_schema()
        nb, nm = schema.n_binary, schema.n_multiclass
        v = self.values
        cont = []
        for k, spec in enumerate(specs):
            idx = v[nb + nm + k]
            if spec.inactive and idx == INACTIVE:
                cont.append(None)
                continue
            value = spec.center(idx)
            if pred is not None:
                value = _refine(pred.continuous[k], spec, idx, value)
            cont.append(value)
        return SceneParams(tuple(bool(b) for b in v[:nb]), v[nb:nb + nm], tuple(cont))


def _refine(weights: np.ndarray, spec: BinSpec, idx: int, fallback: float) -> float:
    j = idx - spec.offset
    lo, hi = max(j - REFINE_WINDOW, 0), min(j + REFINE_WINDOW + 1, spec.k)
    w = weights[spec.offset + lo:spec.offset + hi]
    mass = w.sum()
    if mass <= 0:
        return fallback
    return float(np.dot(w, spec.centers[lo:hi]) / mass)


def argmax_labeling(pred: AttributePrediction) -> Labeling:
    """Independent per-variable argmax (binary ties resolve to false)."""
    return Labeling(
        tuple(int(p > 0.5) for p in pred.binary)
        + tuple(int(np.argmax(m)) for m in pred.multiclass)
        + tuple(int(np.argmax(c)) for c in pred.continuous)
    )


@dataclass(frozen=True)
class EnergyWeights:
    """Scalar settings of the energy.

    ``cooccurrence`` selects how pair tables become costs. ``"normalized"``
    (the default) uses ``-log P(a, b) / (P(a) P(b))``, shifted so each pair
    table's minimum is 0; a pair term then only carries the dependence the
    unaries cannot express. ``"joint"`` uses
    ``-log P(a, b)``, which also re-counts each flag's marginal once per
    partner and pulls every flag toward its prior.
    """

    penalty: float = DEFAULT_PENALTY
    lambda_disc: float = 1.0
    lambda_cont: float = 0.05
    truncation: int = 10
    cooccurrence: str = "normalized"

    def __post_init__(self):
        if not self.penalty > 0:
            raise ConfigError("penalty must be positive")
        if self.lambda_disc < 0 or self.lambda_cont < 0 or self.truncation < 0:
            raise ConfigError("temporal weights must be nonnegative")
        if self.cooccurrence not in ("joint", "normalized"):
            raise ConfigError(f"unknown co-occurrence mode {self.cooccurrence!r}")


@dataclass(frozen=True, eq=False)
class PairTerm:
    i: int
    j: int
    cost: np.ndarray  # cost[x_i, x_j]


@dataclass(frozen=True, eq=False)
class Clique:
    """Hard constraint: ``conflict[x_vars]`` is true for forbidden combinations."""

    id: str
    variables: tuple[int, ...]
    conflict: np.ndarray


@dataclass(frozen=True, eq=False)
class EnergyModel:
    """Discrete energy over ``n_vars`` variables per frame and ``n_frames`` frames.

    Pair terms and cliques are shared by all frames; unaries are per frame.
    ``temporal[v]`` (when set) is the transition cost table of variable ``v``
    between consecutive frames. ``domains`` restricts the values a solver
    may assign (all values by default).
    """

    sizes: tuple[int, ...]
    unaries: tuple[tuple[np.ndarray, ...], ...]
    pairwise: tuple[PairTerm, ...] = ()
    cliques: tuple[Clique, ...] = ()
    penalty: float = DEFAULT_PENALTY
    temporal: tuple[np.ndarray, ...] | None = None
    domains: tuple[tuple[int, ...], ...] | None = None
    kinds: tuple[str, ...] | None = None

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not self.unaries:
            raise ConfigError("an energy model needs at least one frame")
        for frame in self.unaries:
            if len(frame) != len(sizes):
                raise ConfigError("every frame needs one unary table per variable")
            for u, s in zip(frame, sizes):
                if np.shape(u) != (s,):
                    raise ConfigError("unary table shape does not match variable size")
        for p in self.pairwise:
            if p.i == p.j or p.cost.shape != (sizes[p.i], sizes[p.j]):
                raise ConfigError(f"bad pair term ({p.i}, {p.j})")
        for c in self.cliques:
            if c.conflict.shape != tuple(sizes[v] for v in c.variables):
                raise ConfigError(f"clique {c.id}: table shape does not match its variables")
        if self.temporal is not None:
            if len(self.temporal) != len(sizes):
                raise ConfigError("temporal tables must cover every variable")
            for t, s in zip(self.temporal, sizes):
                if np.shape(t) != (s, s):
                    raise ConfigError("temporal table shape does not match variable size")
        if self.domains is None:
            object.__setattr__(self, "domains", tuple(tuple(range(s)) for s in sizes))
        else:
            doms = tuple(tuple(sorted(set(int(x) for x in d))) for d in self.domains)
            if len(doms) != len(sizes) or any(
                not d or d[0] < 0 or d[-1] >= s for d, s in zip(doms, sizes)
            ):
                raise ConfigError("domains must be nonempty subsets of each variable's values")
            object.__setattr__(self, "domains", doms)
        if self.kinds is None:
            object.__setattr__(
                self, "kinds", tuple("binary" if s == 2 else "discrete" for s in sizes)
            )

    @property
    def n_vars(self) -> int:
        return len(self.sizes)

    @property
    def n_frames(self) -> int:
        return len(self.unaries)

    @property
    def has_temporal(self) -> bool:
        return self.temporal is not None and self.n_frames > 1

    @functools.cached_property
    def factors_of(self) -> tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]:
        """Per variable: (indices into ``pairwise``, indices into ``cliques``)."""
        pairs = [[] for _ in self.sizes]
        cliques = [[] for _ in self.sizes]
        for k, p in enumerate(self.pairwise):
            pairs[p.i].append(k)
            pairs[p.j].append(k)
        for k, c in enumerate(self.cliques):
            for v in set(c.variables):
                cliques[v].append(k)
        return tuple((tuple(a), tuple(b)) for a, b in zip(pairs, cliques))

    def frame(self, t: int) -> "EnergyModel":
        """Single-frame model of frame ``t`` (no temporal terms)."""
        return self.with_unaries((self.unaries[t],), temporal=None)

    def with_unaries(self, unaries, temporal: object = "keep") -> "EnergyModel":
        return EnergyModel(
            self.sizes,
            tuple(tuple(f) for f in unaries),
            self.pairwise,
            self.cliques,
            self.penalty,
            self.temporal if temporal == "keep" else temporal,
            self.domains,
            self.kinds,
        )

    def restrict(self, allowed: Mapping[int, int | Iterable[int]]) -> "EnergyModel":
        """Copy with the listed variables restricted (an int freezes a variable)."""
        doms = list(self.domains)
        for v, a in allowed.items():
            doms[v] = (a,) if isinstance(a, (int, np.integer)) else tuple(a)
        return EnergyModel(
            self.sizes, self.unaries, self.pairwise, self.cliques, self.penalty,
            self.temporal, tuple(doms), self.kinds,
        )


@functools.lru_cache(maxsize=8)
def _schema_cliques(schema: AttributeSchema, cont_sizes: tuple[int, ...]) -> tuple[Clique, ...]:
    sizes = (2,) * schema.n_binary + tuple(schema.multiclass_sizes) + cont_sizes
    inactive_capable = {a.name: a.activatable for a in schema.continuous}
    out = []
    for rule in schema.constraints:
        vars_ = tuple(schema.index[n] for n in rule.names)
        kinds = [schema.kind(n) for n in rule.names]
        table = np.zeros(tuple(sizes[v] for v in vars_), dtype=bool)
        for combo in itertools.product(*(range(sizes[v]) for v in vars_)):
            args = []
            for value, kind, name in zip(combo, kinds, rule.names):
                if kind == "binary":
                    args.append(bool(value))
                elif kind == "multiclass":
                    args.append(value)
                else:
                    args.append(not (inactive_capable[name] and value == INACTIVE))
            table[combo] = rule.conflict(*args)
        table.setflags(write=False)
        out.append(Clique(rule.id, vars_, table))
    return tuple(out)


def _neglog(p) -> np.ndarray:
    return -np.log(np.clip(np.asarray(p, dtype=float), PROB_FLOOR, 1.0))


def prediction_unaries(pred: AttributePrediction) -> tuple[np.ndarray, ...]:
    """``-log p`` tables, with probabilities clamped to ``[1e-9, 1 - 1e-9]``."""
    p = np.clip(pred.binary, PROB_FLOOR, 1.0 - PROB_FLOOR)
    out = [np.array([-np.log1p(-pi), -np.log(pi)]) for pi in p]
    out += [_neglog(m) for m in pred.multiclass]
    out += [_neglog(c) for c in pred.continuous]
    return tuple(out)


def cooccurrence_costs(cooc: CooccurrenceTables, mode: str = "normalized") -> np.ndarray:
    """(n, n, 2, 2) pair costs from smoothed joint tables."""
    m = np.asarray(cooc.tables, dtype=float)
    if (m <= 0).any() or not np.isfinite(m).all():
        raise PredictionError("co-occurrence tables must be strictly positive")
    if mode == "joint":
        return -np.log(m)
    if mode == "normalized":
        n = m.shape[0]
        marg = np.stack([m[i, i].diagonal() for i in range(n)])  # (n, 2)
        cost = -np.log(m / (marg[:, None, :, None] * marg[None, :, None, :]))
        # a per-pair constant does not move the minimizer; keeping costs >= 0
        # means any rule violation costs at least the penalty
        return cost - cost.min(axis=(2, 3), keepdims=True)
    raise ConfigError(f"unknown co-occurrence mode {mode!r}")


def temporal_tables(
    schema: AttributeSchema, specs: Sequence[BinSpec], weights: EnergyWeights
) -> tuple[np.ndarray, ...]:
    """Transition costs: label changes for discrete variables, truncated bin distance otherwise.

    Switching a continuous attribute on or off costs the truncated maximum.
    """
    out = []
    for size in (2,) * schema.n_binary + tuple(schema.multiclass_sizes):
        out.append(weights.lambda_disc * (1.0 - np.eye(size)))
    for spec in specs:
        idx = np.arange(spec.size)
        cost = np.minimum(np.abs(idx[:, None] - idx[None, :]), weights.truncation).astype(float)
        if spec.inactive:
            cost[INACTIVE, 1:] = cost[1:, INACTIVE] = weights.truncation
        out.append(weights.lambda_cont * cost)
    return tuple(out)


def build_energy(
    preds: AttributePrediction | Sequence[AttributePrediction],
    cooc: CooccurrenceTables | None = None,
    schema: AttributeSchema | None = None,
    weights: EnergyWeights | None = None,
    specs: Sequence[BinSpec] | None = None,
) -> EnergyModel:
    """Energy model for one frame or an ordered sequence of frames."""
    schema = schema or default_schema()
    weights = weights or EnergyWeights()
    specs = tuple(specs or bin_specs(schema))
    frames = [preds] if isinstance(preds, AttributePrediction) else list(preds)
    if not frames:
        raise ConfigError("need at least one prediction")
    for p in frames:
        p.check_bins(specs)
    cooc = cooc or CooccurrenceTables.uniform(schema.n_binary)
    if cooc.tables.shape != (schema.n_binary, schema.n_binary, 2, 2):
        raise SchemaMismatchError("co-occurrence tables do not match the binary attributes")
    pair_cost = cooccurrence_costs(cooc, weights.cooccurrence)
    pairs = tuple(
        PairTerm(i, j, pair_cost[i, j])
        for i in range(schema.n_binary)
        for j in range(i + 1, schema.n_binary)
    )
    cont_sizes = tuple(s.size for s in specs)
    sizes = (2,) * schema.n_binary + tuple(schema.multiclass_sizes) + cont_sizes
    kinds = tuple(schema.kind(n) for n in schema.names)
    return EnergyModel(
        sizes=sizes,
        unaries=tuple(prediction_unaries(p) for p in frames),
        pairwise=pairs,
        cliques=_schema_cliques(schema, cont_sizes),
        penalty=weights.penalty,
        temporal=temporal_tables(schema, specs, weights) if len(frames) > 1 else None,
        kinds=kinds,
    )


def _as_frames(model: EnergyModel, labeling) -> list[tuple[int, ...]]:
    if isinstance(labeling, Labeling):
        frames = [labeling.values]
    elif len(labeling) and isinstance(labeling[0], Labeling):
        frames = [lab.values for lab in labeling]
    elif len(labeling) and isinstance(labeling[0], (Sequence, np.ndarray)):
        frames = [tuple(int(x) for x in lab) for lab in labeling]
    else:
        frames = [tuple(int(x) for x in labeling)]
    if len(frames) != model.n_frames:
        raise ConfigError(f"expected {model.n_frames} frames, got {len(frames)}")
    for f in frames:
        if len(f) != model.n_vars:
            raise ConfigError(f"expected {model.n_vars} values per frame, got {len(f)}")
        for x, s in zip(f, model.sizes):
            if not 0 <= x < s:
                raise ConfigError("labeling value outside its variable's range")
    return frames


def frame_energy(model: EnergyModel, values: Sequence[int], t: int = 0) -> float:
    """Energy of frame ``t`` alone: unaries, pair terms and clique penalties."""
    e = 0.0
    for u, x in zip(model.unaries[t], values):
        e += float(u[x])
    for p in model.pairwise:
        e += float(p.cost[values[p.i], values[p.j]])
    for c in model.cliques:
        if c.conflict[tuple(values[v] for v in c.variables)]:
            e += model.penalty
    return e


def transition_energy(model: EnergyModel, a: Sequence[int], b: Sequence[int]) -> float:
    if model.temporal is None:
        return 0.0
    return float(sum(tab[x, y] for tab, x, y in zip(model.temporal, a, b)))


def energy_of(model: EnergyModel, labeling) -> float:
    """Total energy of a labeling (single frame) or a sequence of labelings."""
    frames = _as_frames(model, labeling)
    e = sum(frame_energy(model, f, t) for t, f in enumerate(frames))
    for a, b in zip(frames, frames[1:]):
        e += transition_energy(model, a, b)
    return e


def violated_cliques(model: EnergyModel, labeling: Labeling | Sequence[int]) -> list[str]:
    values = labeling.values if isinstance(labeling, Labeling) else tuple(labeling)
    return [c.id for c in model.cliques if c.conflict[tuple(values[v] for v in c.variables)]]

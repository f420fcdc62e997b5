"""Ancestral sampling of feasible scenes from a hand-specified prior.

Attributes are drawn in topological order of a small directed acyclic model:

    side roads -> main_road_ends -> crosswalks
    oneway_main -> lanes_left_count -> delimiter_median
    lanes_right_count
    sidewalks -> delimiters
    main_road_curved
    continuous values (each gated by its controller)

Every conditional is written so that the schema's feasibility rules can
never be violated, which makes rejection sampling unnecessary.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from roadlayout.errors import ConfigError
from roadlayout.rng import CounterRNG, split
from roadlayout.schema import SceneParams, default_schema

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib


@dataclass(frozen=True)
class PriorConfig:
    """Distribution parameters of the scene prior.

    Lane-count weights are indexed by count ``0..6``. For two-way roads the
    weight at index 0 is ignored since a two-way road needs an opposing lane;
    if the remaining two-way mass is zero, ``oneway_main`` is forced true.
    """

    side_road_left: float = 0.3
    side_road_right: float = 0.3
    main_road_ends: float = 0.25
    crosswalk_near_intersection: float = 0.4
    crosswalk_near_midblock: float = 0.05
    crosswalk_far: float = 0.3
    crosswalk_left: float = 0.5
    crosswalk_right: float = 0.5
    oneway_main: float = 0.15
    lanes_left_two_way: tuple[float, ...] = (0.0, 0.45, 0.3, 0.15, 0.05, 0.03, 0.02)
    lanes_left_one_way: tuple[float, ...] = (0.5, 0.25, 0.12, 0.06, 0.04, 0.02, 0.01)
    lanes_right: tuple[float, ...] = (0.5, 0.25, 0.12, 0.06, 0.04, 0.02, 0.01)
    delimiter_median: float = 0.2
    sidewalk_left: float = 0.5
    sidewalk_right: float = 0.5
    delimiter_with_sidewalk: float = 0.6
    delimiter_without_sidewalk: float = 0.1
    main_road_curved: float = 0.2
    lane_width_mean: float = 3.5
    lane_width_std: float = 0.5
    lane_width_range: tuple[float, float] = (2.5, 5.0)
    side_road_distance_range: tuple[float, float] = (6.0, 40.0)
    side_road_width_range: tuple[float, float] = (4.0, 16.0)
    delimiter_width_range: tuple[float, float] = (0.5, 2.0)
    sidewalk_width_range: tuple[float, float] = (1.0, 3.0)
    curvature_range: tuple[float, float] = (-0.02, 0.02)
    curvature_dead_zone: float = 0.002
    seed: int = 0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                object.__setattr__(self, f.name, tuple(float(x) for x in v))
        self.check()

    def check(self) -> None:
        """Raise :class:`ConfigError` if any invariant is broken."""
        for name in _PROBABILITIES:
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"prior.{name}: probability {p} outside [0, 1]")
        for name in ("lanes_left_two_way", "lanes_left_one_way", "lanes_right"):
            w = getattr(self, name)
            if len(w) != 7:
                raise ConfigError(f"prior.{name}: expected 7 weights, got {len(w)}")
            if any(x < 0 for x in w) or sum(w) <= 0:
                raise ConfigError(f"prior.{name}: weights must be nonnegative with positive sum")
        schema = default_schema()
        bounds = {
            "lane_width_range": "ego_lane_width",
            "side_road_distance_range": "dist_side_road_left",
            "side_road_width_range": "side_road_width_left",
            "delimiter_width_range": "delimiter_width_left",
            "sidewalk_width_range": "sidewalk_width_left",
            "curvature_range": "curvature",
        }
        for key, attr_name in bounds.items():
            lo, hi = getattr(self, key)
            attr = schema.attribute(attr_name)
            if not (attr.low <= lo < hi <= attr.high):
                raise ConfigError(
                    f"prior.{key}: ({lo}, {hi}) not inside [{attr.low}, {attr.high}]"
                )
        if self.lane_width_std <= 0:
            raise ConfigError("prior.lane_width_std must be positive")
        lo, hi = self.curvature_range
        if not 0 <= self.curvature_dead_zone < max(abs(lo), abs(hi)):
            raise ConfigError("prior.curvature_dead_zone leaves no admissible curvature")

    @classmethod
    def from_mapping(cls, values: Mapping[str, object], base: "PriorConfig | None" = None):
        """Override fields of ``base`` (default prior) from a flat mapping."""
        base = base or cls()
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown prior keys: {', '.join(unknown)}")
        changes = {}
        for k, v in values.items():
            changes[k] = tuple(v) if isinstance(v, (list, tuple)) else v
        try:
            return dataclasses.replace(base, **changes)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}


CONFIG_SECTIONS = frozenset({"prior", "noise", "crf", "render"})

_PROBABILITIES = (
    "side_road_left", "side_road_right", "main_road_ends", "crosswalk_near_intersection",
    "crosswalk_near_midblock", "crosswalk_far", "crosswalk_left", "crosswalk_right",
    "oneway_main", "delimiter_median", "sidewalk_left", "sidewalk_right",
    "delimiter_with_sidewalk", "delimiter_without_sidewalk", "main_road_curved",
)


def load_prior_config(path) -> PriorConfig:
    """Read prior overrides from a TOML file using dotted ``prior.*`` keys.

    Other sections of a shared run config (``noise``, ``crf``, ``render``)
    are ignored.
    """
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read prior config {path}: {exc}") from exc
    extra = sorted(set(doc) - CONFIG_SECTIONS)
    if extra:
        raise ConfigError(f"unexpected top-level keys: {', '.join(extra)}")
    return PriorConfig.from_mapping(doc.get("prior", {}))


def sample_scene(prior: PriorConfig, seed: int) -> SceneParams:
    """Draw one feasible scene; deterministic in ``(prior, seed)``."""
    rng = CounterRNG(seed)
    side_left = rng.bernoulli(prior.side_road_left)
    side_right = rng.bernoulli(prior.side_road_right)
    intersection = side_left or side_right
    ends = intersection and rng.bernoulli(prior.main_road_ends)
    near_p = prior.crosswalk_near_intersection if intersection else prior.crosswalk_near_midblock
    cw_near = rng.bernoulli(near_p)
    cw_far = intersection and not ends and rng.bernoulli(prior.crosswalk_far)
    cw_left = side_left and rng.bernoulli(prior.crosswalk_left)
    cw_right = side_right and rng.bernoulli(prior.crosswalk_right)

    two_way = prior.lanes_left_two_way[1:]
    oneway = sum(two_way) <= 0 or rng.bernoulli(prior.oneway_main)
    if oneway:
        lanes_left = rng.categorical(prior.lanes_left_one_way)
    else:
        lanes_left = 1 + rng.categorical(two_way)
    lanes_right = rng.categorical(prior.lanes_right)
    median = (not oneway) and lanes_left >= 1 and rng.bernoulli(prior.delimiter_median)

    sidewalk_left = rng.bernoulli(prior.sidewalk_left)
    sidewalk_right = rng.bernoulli(prior.sidewalk_right)
    delim_left = rng.bernoulli(
        prior.delimiter_with_sidewalk if sidewalk_left else prior.delimiter_without_sidewalk
    )
    delim_right = rng.bernoulli(
        prior.delimiter_with_sidewalk if sidewalk_right else prior.delimiter_without_sidewalk
    )
    curved = rng.bernoulli(prior.main_road_curved)

    def lane_width() -> float:
        lo, hi = prior.lane_width_range
        return rng.truncated_normal(prior.lane_width_mean, prior.lane_width_std, lo, hi)

    def uniform(bounds: tuple[float, float]) -> float:
        return rng.uniform(*bounds)

    values: dict[str, object] = {
        "side_road_left": side_left,
        "side_road_right": side_right,
        "main_road_ends": ends,
        "crosswalk_near": cw_near,
        "crosswalk_far": cw_far,
        "crosswalk_left": cw_left,
        "crosswalk_right": cw_right,
        "sidewalk_left": sidewalk_left,
        "sidewalk_right": sidewalk_right,
        "delimiter_left": delim_left,
        "delimiter_right": delim_right,
        "delimiter_median": median,
        "oneway_main": oneway,
        "main_road_curved": curved,
        "lanes_left_count": lanes_left,
        "lanes_right_count": lanes_right,
        "ego_lane_width": lane_width(),
    }
    for side, count in (("left", lanes_left), ("right", lanes_right)):
        for i in range(1, 7):
            values[f"lane_width_{side}_{i}"] = lane_width() if i <= count else None
    for side, present in (("left", side_left), ("right", side_right)):
        values[f"dist_side_road_{side}"] = (
            uniform(prior.side_road_distance_range) if present else None
        )
    for side, present in (("left", side_left), ("right", side_right)):
        values[f"side_road_width_{side}"] = uniform(prior.side_road_width_range) if present else None
    for side, present in (("left", delim_left), ("right", delim_right)):
        values[f"delimiter_width_{side}"] = uniform(prior.delimiter_width_range) if present else None
    for side, present in (("left", sidewalk_left), ("right", sidewalk_right)):
        values[f"sidewalk_width_{side}"] = uniform(prior.sidewalk_width_range) if present else None
    values["curvature"] = _curvature(rng, prior) if curved else None
    return SceneParams.from_dict(values)


def _curvature(rng: CounterRNG, prior: PriorConfig) -> float:
    # uniform over [lo, -dz] U [dz, hi]
    lo, hi = prior.curvature_range
    dz = prior.curvature_dead_zone
    neg = max(0.0, -dz - lo)
    pos = max(0.0, hi - dz)
    u = rng.uniform(0.0, neg + pos)
    return lo + u if u < neg else dz + (u - neg)


@dataclass(frozen=True)
class SampleBatch:
    scenes: tuple[SceneParams, ...]
    seeds: tuple[int, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.scenes)

    def __iter__(self):
        return iter(self.scenes)

    def __getitem__(self, i):
        return self.scenes[i]


def sample_batch(prior: PriorConfig, base_seed: int, n: int) -> SampleBatch:
    """Draw ``n`` scenes; element ``i`` uses sub-seed ``split(base_seed, i)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    seeds = tuple(split(base_seed, i) for i in range(n))
    return SampleBatch(tuple(sample_scene(prior, s) for s in seeds), seeds)


@dataclass(frozen=True)
class CooccurrenceTables:
    """Smoothed pairwise joint probabilities of the binary attributes.

    ``tables[i, j, a, b]`` is P(binary_i = a, binary_j = b); ``tables[j, i]``
    is the transpose of ``tables[i, j]``.
    """

    tables: np.ndarray
    n_samples: int
    alpha: float = 1.0

    def table(self, i: int, j: int) -> np.ndarray:
        return self.tables[i, j]

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "alpha": self.alpha,
            "tables": self.tables.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CooccurrenceTables":
        tables = np.asarray(doc["tables"], dtype=float)
        if tables.ndim != 4 or tables.shape[2:] != (2, 2) or tables.shape[0] != tables.shape[1]:
            raise ConfigError("co-occurrence tables must have shape (n, n, 2, 2)")
        return cls(tables, int(doc["n_samples"]), float(doc.get("alpha", 1.0)))

    @classmethod
    def uniform(cls, n_binary: int = 14) -> "CooccurrenceTables":
        return cls(np.full((n_binary, n_binary, 2, 2), 0.25), 0, 0.0)


def estimate_cooccurrence(
    scenes: Iterable[SceneParams] | SampleBatch, alpha: float = 1.0
) -> CooccurrenceTables:
    """Frequency-count every binary pair with Laplace smoothing ``alpha``."""
    rows = [s.binary for s in scenes]
    if not rows:
        raise ValueError("cannot estimate co-occurrence from an empty batch")
    x = np.asarray(rows, dtype=np.int64)
    n, m = x.shape
    onehot = np.stack([1 - x, x], axis=2).astype(float)  # (n, m, 2)
    counts = np.einsum("nia,njb->ijab", onehot, onehot)
    tables = (counts + alpha) / (n + 4 * alpha)
    return CooccurrenceTables(tables, n, alpha)


def binary_frequencies(scenes: Sequence[SceneParams]) -> np.ndarray:
    return np.asarray([s.binary for s in scenes], dtype=float).mean(axis=0)

"""Attribute registry, scene parameter container and feasibility checks.

A scene is described by 14 binary flags, 2 lane counts and 22 continuous
measurements. Continuous measurements other than the ego-lane width are
*activatable*: they only exist when a controlling flag or lane count enables
them. The feasibility rules in ``default_schema().constraints`` are shared
with the CRF, where each one becomes a hard-penalty clique.
"""

from __future__ import annotations

import functools
import json
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from roadlayout.errors import ParseError, SchemaMismatchError

SCHEMA_VERSION = 1
NUM_LANE_CLASSES = 7  # 0..6 lanes beside the ego-lane

BINARY_NAMES = (
    "side_road_left",
    "side_road_right",
    "main_road_ends",
    "crosswalk_near",
    "crosswalk_far",
    "crosswalk_left",
    "crosswalk_right",
    "sidewalk_left",
    "sidewalk_right",
    "delimiter_left",
    "delimiter_right",
    "delimiter_median",
    "oneway_main",
    "main_road_curved",
)

MULTICLASS_NAMES = ("lanes_left_count", "lanes_right_count")


@dataclass(frozen=True)
class ContinuousAttribute:
    """A continuous attribute with its metric range.

    ``controller`` names the binary flag or lane count that switches the
    attribute on; ``min_count`` is the lane count needed when the controller
    is a lane count (lane slot index). ``controller is None`` means always on.
    """

    name: str
    low: float
    high: float
    controller: str | None = None
    min_count: int = 0

    @property
    def activatable(self) -> bool:
        return self.controller is not None

    @property
    def span(self) -> float:
        return self.high - self.low


def _continuous_attributes() -> tuple[ContinuousAttribute, ...]:
    attrs = [ContinuousAttribute("ego_lane_width", 2.5, 5.0)]
    for side in ("left", "right"):
        for i in range(1, 7):
            attrs.append(
                ContinuousAttribute(f"lane_width_{side}_{i}", 2.5, 5.0, f"lanes_{side}_count", i)
            )
    for side in ("left", "right"):
        attrs.append(ContinuousAttribute(f"dist_side_road_{side}", 6.0, 40.0, f"side_road_{side}"))
    for side in ("left", "right"):
        attrs.append(ContinuousAttribute(f"side_road_width_{side}", 4.0, 16.0, f"side_road_{side}"))
    for side in ("left", "right"):
        attrs.append(ContinuousAttribute(f"delimiter_width_{side}", 0.5, 2.0, f"delimiter_{side}"))
    for side in ("left", "right"):
        attrs.append(ContinuousAttribute(f"sidewalk_width_{side}", 1.0, 3.0, f"sidewalk_{side}"))
    attrs.append(ContinuousAttribute("curvature", -0.02, 0.02, "main_road_curved"))
    return tuple(attrs)


@dataclass(frozen=True)
class Constraint:
    """One feasibility rule over a handful of attributes.

    ``conflict`` receives one argument per entry of ``names``: a ``bool`` for
    binary attributes, an ``int`` for lane counts and an *activity* ``bool``
    for continuous attributes (the value itself never matters to a rule).
    """

    id: str
    group: str  # "S", "Q" or "C"
    names: tuple[str, ...]
    description: str
    conflict: Callable[..., bool] = field(compare=False, repr=False)

    @property
    def order(self) -> tuple[int, int]:
        return ("SQC".index(self.group), int(self.id[1:]))


def _existence(flag: bool, active: bool) -> bool:
    return flag != active


def _constraints() -> tuple[Constraint, ...]:
    out = [
        Constraint(
            "s1", "S", ("oneway_main", "lanes_left_count"),
            "two-way main road needs at least one lane left of the ego-lane",
            lambda oneway, n_left: (not oneway) and n_left == 0,
        ),
        Constraint(
            "s2", "S", ("delimiter_median", "lanes_left_count"),
            "median delimiter needs at least one lane left of the ego-lane",
            lambda median, n_left: median and n_left == 0,
        ),
    ]
    q_pairs = [
        ("side_road_left", "dist_side_road_left"),
        ("side_road_left", "side_road_width_left"),
        ("side_road_right", "dist_side_road_right"),
        ("side_road_right", "side_road_width_right"),
        ("sidewalk_left", "sidewalk_width_left"),
        ("sidewalk_right", "sidewalk_width_right"),
        ("delimiter_left", "delimiter_width_left"),
        ("delimiter_right", "delimiter_width_right"),
        ("main_road_curved", "curvature"),
    ]
    for k, (flag, value) in enumerate(q_pairs, start=1):
        out.append(
            Constraint(f"q{k}", "Q", (flag, value), f"{value} is present iff {flag}", _existence)
        )
    out += [
        Constraint(
            "c1", "C", ("crosswalk_left", "side_road_left"),
            "crosswalk_left requires side_road_left",
            lambda cw, side: cw and not side,
        ),
        Constraint(
            "c2", "C", ("crosswalk_right", "side_road_right"),
            "crosswalk_right requires side_road_right",
            lambda cw, side: cw and not side,
        ),
        Constraint(
            "c3", "C", ("crosswalk_far", "main_road_ends"),
            "crosswalk_far is impossible when the main road ends",
            lambda far, ends: far and ends,
        ),
        Constraint(
            "c4", "C", ("main_road_ends", "side_road_left", "side_road_right"),
            "main_road_ends requires a side road",
            lambda ends, left, right: ends and not (left or right),
        ),
        Constraint(
            "c5", "C", ("delimiter_median", "oneway_main"),
            "a median delimiter implies two-way traffic",
            lambda median, oneway: median and oneway,
        ),
    ]
    k = 6
    for side in ("left", "right"):
        for i in range(1, 7):
            out.append(
                Constraint(
                    f"c{k}", "C", (f"lanes_{side}_count", f"lane_width_{side}_{i}"),
                    f"lane_width_{side}_{i} is present iff lanes_{side}_count >= {i}",
                    functools.partial(_lane_slot_conflict, i),
                )
            )
            k += 1
    return tuple(out)


def _lane_slot_conflict(slot: int, count: int, active: bool) -> bool:
    return (count >= slot) != active


@dataclass(frozen=True)
class AttributeSchema:
    """Static registry of the 38 scene attributes and their feasibility rules."""

    binary_names: tuple[str, ...]
    multiclass_names: tuple[str, ...]
    multiclass_sizes: tuple[int, ...]
    continuous: tuple[ContinuousAttribute, ...]
    constraints: tuple[Constraint, ...]

    def __post_init__(self):
        names = self.names
        if len(set(names)) != len(names):
            raise SchemaMismatchError("attribute identifiers must be unique")
        for attr in self.continuous:
            if not attr.low < attr.high:
                raise SchemaMismatchError(f"{attr.name}: empty range")
            if attr.controller is not None and attr.controller not in names:
                raise SchemaMismatchError(f"{attr.name}: unknown controller {attr.controller}")

    @property
    def continuous_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.continuous)

    @property
    def names(self) -> tuple[str, ...]:
        return self.binary_names + self.multiclass_names + self.continuous_names

    @property
    def n_binary(self) -> int:
        return len(self.binary_names)

    @property
    def n_multiclass(self) -> int:
        return len(self.multiclass_names)

    @property
    def n_continuous(self) -> int:
        return len(self.continuous)

    @functools.cached_property
    def index(self) -> dict[str, int]:
        """Position of every attribute in the flat 38-entry ordering."""
        return {name: i for i, name in enumerate(self.names)}

    def kind(self, name: str) -> str:
        i = self.index[name]
        if i < self.n_binary:
            return "binary"
        if i < self.n_binary + self.n_multiclass:
            return "multiclass"
        return "continuous"

    def attribute(self, name: str) -> ContinuousAttribute:
        return self.continuous[self.index[name] - self.n_binary - self.n_multiclass]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "binary": list(self.binary_names),
            "multiclass": {n: s for n, s in zip(self.multiclass_names, self.multiclass_sizes)},
            "continuous": [
                {
                    "name": a.name, "low": a.low, "high": a.high,
                    "controller": a.controller, "min_count": a.min_count,
                }
                for a in self.continuous
            ],
            "constraints": [
                {"id": c.id, "group": c.group, "names": list(c.names), "description": c.description}
                for c in self.constraints
            ],
        }


@functools.lru_cache(maxsize=None)
def default_schema() -> AttributeSchema:
    """Return the fixed 14 + 2 + 22 attribute registry."""
    return AttributeSchema(
        binary_names=BINARY_NAMES,
        multiclass_names=MULTICLASS_NAMES,
        multiclass_sizes=(NUM_LANE_CLASSES, NUM_LANE_CLASSES),
        continuous=_continuous_attributes(),
        constraints=_constraints(),
    )


@dataclass(frozen=True)
class SceneParams:
    """One full assignment of all scene attributes.

    Continuous entries are ``None`` when the attribute is inactive. Units are
    meters, except curvature (1/m, positive turns right).
    """

    binary: tuple[bool, ...]
    multiclass: tuple[int, ...]
    continuous: tuple[float | None, ...]

    def __post_init__(self):
        object.__setattr__(self, "binary", tuple(bool(b) for b in self.binary))
        object.__setattr__(self, "multiclass", tuple(int(m) for m in self.multiclass))
        object.__setattr__(
            self, "continuous", tuple(None if c is None else float(c) for c in self.continuous)
        )
        schema = default_schema()
        if (len(self.binary), len(self.multiclass), len(self.continuous)) != (
            schema.n_binary, schema.n_multiclass, schema.n_continuous,
        ):
            raise SchemaMismatchError(
                f"expected {schema.n_binary}/{schema.n_multiclass}/{schema.n_continuous} "
                f"attributes, got {len(self.binary)}/{len(self.multiclass)}/{len(self.continuous)}"
            )

    @classmethod
    def from_dict(cls, values: Mapping[str, object], schema: AttributeSchema | None = None):
        schema = schema or default_schema()
        missing = [n for n in schema.names if n not in values]
        if missing:
            raise SchemaMismatchError(f"missing attributes: {', '.join(missing)}")
        return cls(
            tuple(values[n] for n in schema.binary_names),
            tuple(values[n] for n in schema.multiclass_names),
            tuple(values[n] for n in schema.continuous_names),
        )

    def to_dict(self, schema: AttributeSchema | None = None) -> dict[str, object]:
        schema = schema or default_schema()
        return dict(zip(schema.names, self.binary + self.multiclass + self.continuous))

    def get(self, name: str):
        return self.to_dict()[name]

    def replace(self, **changes) -> "SceneParams":
        """Return a copy with the named attributes changed."""
        values = self.to_dict()
        unknown = set(changes) - set(values)
        if unknown:
            raise SchemaMismatchError(f"unknown attributes: {', '.join(sorted(unknown))}")
        values.update(changes)
        return SceneParams.from_dict(values)


@dataclass(frozen=True)
class Violation:
    id: str
    description: str


@dataclass(frozen=True)
class ValidationReport:
    """Violated feasibility rules, ordered by constraint id; empty means feasible."""

    violations: tuple[Violation, ...] = ()

    def __iter__(self) -> Iterator[Violation]:
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(v.id for v in self.violations)


def rule_arguments(constraint: Constraint, values: Mapping[str, object], schema: AttributeSchema):
    """Map attribute values to the argument convention of ``constraint.conflict``."""
    args = []
    for name in constraint.names:
        kind = schema.kind(name)
        v = values[name]
        if kind == "continuous":
            args.append(v is not None)
        elif kind == "binary":
            args.append(bool(v))
        else:
            args.append(int(v))
    return args


def validate(params: SceneParams, schema: AttributeSchema | None = None) -> ValidationReport:
    """List every feasibility rule ``params`` violates.

    Besides the S/Q/C rules this reports ``range:<name>`` entries for lane
    counts outside their domain and continuous values outside their range.

    Raises:
        SchemaMismatchError: attribute counts do not match ``schema``.
    """
    schema = schema or default_schema()
    if (len(params.binary), len(params.multiclass), len(params.continuous)) != (
        schema.n_binary, schema.n_multiclass, schema.n_continuous,
    ):
        raise SchemaMismatchError("scene parameters do not match the schema")
    values = params.to_dict(schema)
    found = []
    for c in sorted(schema.constraints, key=lambda c: c.order):
        if c.conflict(*rule_arguments(c, values, schema)):
            found.append(Violation(c.id, c.description))
    for name, size in zip(schema.multiclass_names, schema.multiclass_sizes):
        if not 0 <= values[name] < size:
            found.append(Violation(f"range:{name}", f"{name} outside 0..{size - 1}"))
    for attr in schema.continuous:
        v = values[attr.name]
        if v is not None and not (math.isfinite(v) and attr.low <= v <= attr.high):
            found.append(
                Violation(f"range:{attr.name}", f"{attr.name} outside [{attr.low}, {attr.high}]")
            )
    return ValidationReport(tuple(found))


def is_feasible(params: SceneParams, schema: AttributeSchema | None = None) -> bool:
    return validate(params, schema).feasible


_SIDE = re.compile(r"left|right")


def mirror_name(name: str) -> str:
    return _SIDE.sub(lambda m: "right" if m.group() == "left" else "left", name)


def mirror(params: SceneParams) -> SceneParams:
    """Swap every left/right attribute pair and negate the curvature."""
    values = params.to_dict()
    out = {mirror_name(k): v for k, v in values.items()}
    if out["curvature"] is not None:
        out["curvature"] = -out["curvature"]
    return SceneParams.from_dict(out)


# --- JSONL records ---------------------------------------------------------------------------


def serialize(params: SceneParams, schema: AttributeSchema | None = None) -> str:
    """Encode a scene as one JSON object (no trailing newline), keys in schema order."""
    schema = schema or default_schema()
    record = {"schema_version": SCHEMA_VERSION}
    record.update(params.to_dict(schema))
    return json.dumps(record, allow_nan=False)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def deserialize(text: str | Mapping, schema: AttributeSchema | None = None) -> SceneParams:
    """Decode a scene record produced by :func:`serialize`.

    Raises:
        ParseError: malformed JSON, unknown or missing keys, wrong value
            types, or values outside their domain. ``field`` names the
            offending key.
    """
    schema = schema or default_schema()
    if isinstance(text, Mapping):
        record = dict(text)
    else:
        try:
            record = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}") from exc
    if not isinstance(record, dict):
        raise ParseError("scene record must be a JSON object")
    version = record.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version!r}", field="schema_version")
    for key in record:
        if key not in schema.index:
            raise ParseError(f"unknown field {key!r}", field=key)
    for name in schema.names:
        if name not in record:
            raise ParseError(f"missing field {name!r}", field=name)
    for name in schema.binary_names:
        if not isinstance(record[name], bool):
            raise ParseError(f"{name}: expected a boolean", field=name)
    for name, size in zip(schema.multiclass_names, schema.multiclass_sizes):
        v = record[name]
        if not isinstance(v, int) or isinstance(v, bool):
            raise ParseError(f"{name}: expected an integer", field=name)
        if not 0 <= v < size:
            raise ParseError(f"{name}: value {v} outside 0..{size - 1}", field=name)
    for attr in schema.continuous:
        v = record[attr.name]
        if v is None:
            continue
        if not _is_number(v):
            raise ParseError(f"{attr.name}: expected a number or null", field=attr.name)
        if not attr.low <= v <= attr.high:
            raise ParseError(
                f"{attr.name}: value {v} outside [{attr.low}, {attr.high}]", field=attr.name
            )
    return SceneParams.from_dict(record, schema)


def write_scenes(path, scenes: Iterable[SceneParams]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in scenes:
            fh.write(serialize(s) + "\n")


def read_scenes(path) -> list[SceneParams]:
    """Read a scene JSONL file; parse errors carry the 1-based line number."""
    scenes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                scenes.append(deserialize(line))
            except ParseError as exc:
                raise ParseError(exc.message, field=exc.field, line=lineno) from exc
    return scenes


def flat_values(params: SceneParams) -> Sequence[object]:
    return params.binary + params.multiclass + params.continuous

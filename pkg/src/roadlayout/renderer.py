"""Semantic top-view rasterization of scene parameters.

The camera sits at the bottom-center of the grid looking up. Every pixel
takes the class of its center point; there is no anti-aliasing. Geometry is
evaluated in road-aligned coordinates: ``s`` is the arc length along the
main-road centerline and ``u`` the signed lateral offset (positive to the
right). Left-side elements are tested against ``-u`` with the left
attributes, so mirroring a scene mirrors its render bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from roadlayout.errors import ConfigError, FeasibilityError
from roadlayout.schema import SceneParams, validate

BACKGROUND, ROAD, SIDEWALK, LANE_BOUNDARY, CROSSWALK = range(5)
CLASS_NAMES = ("background", "road", "sidewalk", "lane_boundary", "crosswalk")
NUM_CLASSES = len(CLASS_NAMES)

# RGB palette used for PNG export, indexed by class
PALETTE = (
    (0, 0, 0),
    (128, 64, 128),
    (244, 35, 232),
    (255, 255, 255),
    (255, 200, 0),
)

CROSSWALK_DEPTH = 3.0
# crosswalks drawn without an intersection sit at these fixed distances
MIDBLOCK_NEAR = 15.0
MIDBLOCK_FAR = 30.0

RAW_MAGIC = b"BEVR"
RAW_VERSION = 1


@dataclass(frozen=True)
class RenderConfig:
    height: int = 192
    width: int = 192
    meters_per_pixel: float = 0.25

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.meters_per_pixel <= 0:
            raise ConfigError("render grid dimensions and resolution must be positive")

    @property
    def forward_extent(self) -> float:
        return self.height * self.meters_per_pixel

    @property
    def lateral_extent(self) -> float:
        return self.width * self.meters_per_pixel

    @classmethod
    def from_extents(cls, forward: float, lateral: float, meters_per_pixel: float):
        h = forward / meters_per_pixel
        w = lateral / meters_per_pixel
        if abs(h - round(h)) > 1e-9 or abs(w - round(w)) > 1e-9:
            raise ConfigError("extents must be whole multiples of meters_per_pixel")
        return cls(int(round(h)), int(round(w)), meters_per_pixel)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Metric (x, y) of every pixel center, each of shape (H, W)."""
        mpp = self.meters_per_pixel
        cols = np.arange(self.width, dtype=float)
        rows = np.arange(self.height, dtype=float)
        x = (cols + 0.5 - self.width / 2.0) * mpp
        y = (self.height - rows - 0.5) * mpp
        return np.broadcast_to(x, (self.height, self.width)), np.broadcast_to(
            y[:, None], (self.height, self.width)
        )


@dataclass(frozen=True, eq=False)
class SemanticTopView:
    """H x W grid of class indices (see :data:`CLASS_NAMES`)."""

    classes: np.ndarray
    config: RenderConfig

    def __eq__(self, other):
        return (
            isinstance(other, SemanticTopView)
            and self.config == other.config
            and np.array_equal(self.classes, other.classes)
        )

    def counts(self) -> np.ndarray:
        return np.bincount(self.classes.ravel(), minlength=NUM_CLASSES)


def road_coordinates(x: np.ndarray, y: np.ndarray, curvature: float | None):
    """Map metric points to (arc length, lateral offset) of the main road.

    A curved centerline is a circle through the camera, tangent to the
    forward axis; positive curvature bends right. Negative curvature is
    evaluated as the mirror image of the positive case so both signs share
    the same floating-point path.
    """
    if not curvature:
        return y, x
    sign = 1.0 if curvature > 0 else -1.0
    radius = 1.0 / abs(curvature)
    dx = radius - x * sign
    rho = np.hypot(dx, y)
    u = radius - rho
    s = radius * np.arctan2(y, dx)
    return s, u * sign


def _between(v, lo, hi):
    return (v >= lo) & (v <= hi)


def render(params: SceneParams, cfg: RenderConfig | None = None, *, check: bool = True):
    """Rasterize ``params`` into a :class:`SemanticTopView`.

    Paint order is road, sidewalk, lane boundary, crosswalk (later wins).
    Delimiter strips stay background. ``oneway_main`` and
    ``delimiter_median`` carry no geometry and do not affect the render.

    Raises:
        FeasibilityError: ``check`` is true and ``params`` is infeasible.
    """
    cfg = cfg or RenderConfig()
    if check:
        report = validate(params)
        if not report.feasible:
            raise FeasibilityError(report)
    v = params.to_dict()
    x, y = cfg.pixel_centers()
    s, u = road_coordinates(x, y, v["curvature"] if v["main_road_curved"] else None)
    half_pixel = cfg.meters_per_pixel / 2.0
    ego_half = v["ego_lane_width"] / 2.0

    # per side: lateral offset seen from that side, and the side's geometry
    sides = {}
    for side, lateral in (("left", -u), ("right", u)):
        n = v[f"lanes_{side}_count"]
        boundaries = [ego_half]
        for i in range(1, n + 1):
            boundaries.append(boundaries[-1] + v[f"lane_width_{side}_{i}"])
        edge = boundaries[-1]
        span = None
        if v[f"side_road_{side}"]:
            d, w = v[f"dist_side_road_{side}"], v[f"side_road_width_{side}"]
            span = (d - w / 2.0, d + w / 2.0)
        sides[side] = (lateral, boundaries[:-1], edge, span)

    spans = [sp for (_, _, _, sp) in sides.values() if sp is not None]
    intersection = (min(a for a, _ in spans), max(b for _, b in spans)) if spans else None
    if v["main_road_ends"] and intersection is not None:
        along_main = s <= intersection[1]
    else:
        along_main = np.ones_like(s, dtype=bool)

    lat_l, _, edge_l, _ = sides["left"]
    lat_r, _, edge_r, _ = sides["right"]
    main = along_main & (lat_l <= edge_l) & (lat_r <= edge_r)

    out = np.zeros((cfg.height, cfg.width), dtype=np.uint8)
    out[main] = ROAD
    for side in ("left", "right"):
        lateral, _, edge, span = sides[side]
        if span is not None:
            out[_between(s, *span) & (lateral >= edge)] = ROAD

    for side in ("left", "right"):
        lateral, _, edge, span = sides[side]
        if not v[f"sidewalk_{side}"]:
            continue
        inner = edge + (v[f"delimiter_width_{side}"] if v[f"delimiter_{side}"] else 0.0)
        outer = inner + v[f"sidewalk_width_{side}"]
        walk = along_main & _between(lateral, inner, outer)
        if span is not None:
            walk &= ~_between(s, *span)
        out[walk] = SIDEWALK

    lane_area = main
    if intersection is not None:
        lane_area = lane_area & ~_between(s, *intersection)
    for side in ("left", "right"):
        lateral, boundaries, _, _ = sides[side]
        for b in boundaries:
            out[lane_area & (np.abs(lateral - b) < half_pixel)] = LANE_BOUNDARY

    across_main = (lat_l <= edge_l) & (lat_r <= edge_r)
    if v["crosswalk_near"]:
        start = intersection[0] - CROSSWALK_DEPTH if intersection else MIDBLOCK_NEAR
        out[across_main & _between(s, start, start + CROSSWALK_DEPTH)] = CROSSWALK
    if v["crosswalk_far"]:
        start = intersection[1] if intersection else MIDBLOCK_FAR
        out[across_main & _between(s, start, start + CROSSWALK_DEPTH)] = CROSSWALK
    for side in ("left", "right"):
        lateral, _, edge, span = sides[side]
        if v[f"crosswalk_{side}"] and span is not None:
            out[_between(s, *span) & _between(lateral, edge, edge + CROSSWALK_DEPTH)] = CROSSWALK
    return SemanticTopView(out, cfg)


def to_onehot(view: SemanticTopView) -> np.ndarray:
    """H x W x 4 indicator stack; channel ``c`` marks class ``c + 1``."""
    return np.stack([view.classes == c for c in range(1, NUM_CLASSES)], axis=-1).astype(np.uint8)


def from_onehot(stack: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_onehot`: argmax over channels, background where all zero."""
    stack = np.asarray(stack)
    labels = stack.argmax(axis=-1).astype(np.uint8) + 1
    labels[stack.max(axis=-1) == 0] = BACKGROUND
    return labels


def write_png(view: SemanticTopView, path) -> None:
    from PIL import Image

    img = Image.fromarray(view.classes, mode="P")
    flat = [c for rgb in PALETTE for c in rgb]
    img.putpalette(flat + [0] * (768 - len(flat)))
    img.save(path, format="PNG", optimize=False)


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img, dtype=np.uint8)


def to_raw(view: SemanticTopView) -> bytes:
    """16-byte header (magic, u32 H, u32 W, u32 version; little endian) + row-major classes."""
    h, w = view.classes.shape
    return RAW_MAGIC + struct.pack("<III", h, w, RAW_VERSION) + view.classes.tobytes(order="C")


def from_raw(data: bytes) -> np.ndarray:
    if len(data) < 16 or data[:4] != RAW_MAGIC:
        raise ValueError("not a BEVR raw render")
    h, w, version = struct.unpack("<III", data[4:16])
    if version != RAW_VERSION:
        raise ValueError(f"unsupported BEVR version {version}")
    body = data[16:]
    if len(body) != h * w:
        raise ValueError("BEVR payload size does not match header")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()

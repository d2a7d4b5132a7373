"""Stadium spatial model and the deterministic spatial math built on it.

Coordinates are continuous pixels on a ``width x height`` canvas with the
y axis growing downward, so "North" means smaller y. Layouts are loaded from
TOML files (see ``data/default_layout.toml`` for the schema) and are treated
as data: nothing in this module hard-codes a rectangle.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from ._toml import load_toml

Point = tuple[float, float]

LAYOUT_SCHEMA_VERSION = 1
DEFAULT_LAYOUT = "default_layout.toml"


class GeometryError(ValueError):
    """Raised for inputs outside a spatial operation's domain."""


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self) -> None:
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise GeometryError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def center(self) -> Point:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    @property
    def corners(self) -> tuple[Point, Point, Point, Point]:
        return ((self.x0, self.y0), (self.x1, self.y0), (self.x1, self.y1), (self.x0, self.y1))

    def contains(self, p: Point) -> bool:
        """Closed containment (boundary counts as inside)."""
        return self.x0 <= p[0] <= self.x1 and self.y0 <= p[1] <= self.y1

    def contains_strict(self, p: Point, eps: float = 0.0) -> bool:
        """Open containment, shrunk by ``eps`` on every side."""
        return (self.x0 + eps < p[0] < self.x1 - eps) and (self.y0 + eps < p[1] < self.y1 - eps)

    def overlaps(self, other: "Rect") -> bool:
        """True when the two rectangles share positive area."""
        return (min(self.x1, other.x1) > max(self.x0, other.x0)
                and min(self.y1, other.y1) > max(self.y0, other.y0))

    def distance_to(self, p: Point) -> float:
        dx = max(self.x0 - p[0], 0.0, p[0] - self.x1)
        dy = max(self.y0 - p[1], 0.0, p[1] - self.y1)
        return math.hypot(dx, dy)

    def nearest_point(self, p: Point) -> Point:
        return (min(max(p[0], self.x0), self.x1), min(max(p[1], self.y0), self.y1))

    def as_list(self) -> list[float]:
        return [self.x0, self.y0, self.x1, self.y1]


class FeatureKind(str, Enum):
    SEATING = "SeatingSection"
    PATHWAY = "Pathway"
    FAMILY = "FamilyArea"
    ACCESSIBILITY = "AccessibilityArea"
    STAGE = "Stage"
    BLEACHER = "BleacherArea"
    TRACK = "TrackRegion"


# containment tie-break: seating, then pathways, then areas, then stage
_KIND_RANK = {
    FeatureKind.SEATING: 0,
    FeatureKind.PATHWAY: 1,
    FeatureKind.FAMILY: 2,
    FeatureKind.ACCESSIBILITY: 2,
    FeatureKind.BLEACHER: 2,
    FeatureKind.TRACK: 2,
    FeatureKind.STAGE: 3,
}


@dataclass(frozen=True)
class StadiumFeature:
    id: str
    kind: FeatureKind
    rect: Rect
    name: str = ""
    row_spacing: Optional[float] = None
    col_spacing: Optional[float] = None
    # (label, x, y) for each pathway end
    endpoints: tuple[tuple[str, float, float], ...] = ()
    impassable: bool = False

    @property
    def label(self) -> str:
        return self.name or self.id

    @property
    def is_obstacle(self) -> bool:
        return self.kind is FeatureKind.STAGE or self.impassable


@dataclass(frozen=True)
class ExitPoint:
    id: str
    position: Point


@dataclass(frozen=True)
class Region:
    """Rectangle backing a non-exit destination."""

    destination: str
    kind: str  # "region" or "social"
    label: str
    rect: Rect


@dataclass(frozen=True)
class StadiumModel:
    width: float
    height: float
    features: tuple[StadiumFeature, ...]
    exits: tuple[ExitPoint, ...]
    regions: tuple[Region, ...] = ()
    name: str = "stadium"
    _by_id: dict = field(default=None, compare=False, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        canvas = Rect(0.0, 0.0, self.width, self.height)
        for f in self.features:
            if not (canvas.contains((f.rect.x0, f.rect.y0)) and canvas.contains((f.rect.x1, f.rect.y1))):
                raise GeometryError(f"feature {f.id} lies outside the canvas")
        positions = [e.position for e in self.exits]
        if len(set(positions)) != len(positions):
            raise GeometryError("exit positions must be distinct")
        ids = [e.id for e in self.exits]
        if len(set(ids)) != len(ids):
            raise GeometryError("exit ids must be unique")
        for e in self.exits:
            if not self.in_canvas(e.position):
                raise GeometryError(f"exit {e.id} lies outside the canvas")
        ordered = tuple(sorted(
            enumerate(self.features),
            key=lambda item: (_KIND_RANK[item[1].kind],
                              _natural_key(item[1].id) if item[1].kind is FeatureKind.SEATING else (),
                              item[0]),
        ))
        object.__setattr__(self, "features", tuple(f for _, f in ordered))
        object.__setattr__(self, "_by_id", {f.id: f for f in self.features})

    def in_canvas(self, p: Point) -> bool:
        return 0.0 <= p[0] <= self.width and 0.0 <= p[1] <= self.height

    def feature(self, feature_id: str) -> StadiumFeature:
        return self._by_id[feature_id]

    def features_of(self, kind: FeatureKind) -> list[StadiumFeature]:
        return [f for f in self.features if f.kind is kind]

    @property
    def stage(self) -> StadiumFeature:
        return self.features_of(FeatureKind.STAGE)[0]

    @property
    def obstacles(self) -> tuple[Rect, ...]:
        return tuple(f.rect for f in self.features if f.is_obstacle)

    def exit(self, exit_id: str) -> ExitPoint:
        for e in self.exits:
            if e.id == exit_id:
                return e
        raise GeometryError(f"unknown exit {exit_id!r}")

    def region(self, destination: str) -> Region:
        for r in self.regions:
            if r.destination == destination:
                return r
        raise GeometryError(f"no region rectangle for destination {destination!r}")

    def with_exits(self, exits: Sequence[ExitPoint]) -> "StadiumModel":
        return replace(self, exits=tuple(exits), _by_id=None)


def _natural_key(s: str) -> tuple:
    return tuple(int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", s))


def validate_default_invariants(model: StadiumModel) -> None:
    """Check the structural constraints every shipped stadium layout must meet."""
    seating = model.features_of(FeatureKind.SEATING)
    if len(seating) != 8:
        raise GeometryError(f"expected 8 seating sections, found {len(seating)}")
    xs = sorted({f.rect.x0 for f in seating})
    ys = sorted({f.rect.y0 for f in seating})
    if (len(ys), len(xs)) != (2, 4):
        raise GeometryError("seating sections must form a 2x4 grid")
    if len(model.features_of(FeatureKind.STAGE)) != 1:
        raise GeometryError("layout must contain exactly one stage")


# --------------------------------------------------------------------------
# layout files
# --------------------------------------------------------------------------

def _rect(value, where: str) -> Rect:
    if not (isinstance(value, (list, tuple)) and len(value) == 4):
        raise GeometryError(f"{where}: rect must be [x0, y0, x1, y1]")
    return Rect(*(float(v) for v in value))


def layout_from_dict(data: dict) -> StadiumModel:
    version = data.get("schema_version")
    if version != LAYOUT_SCHEMA_VERSION:
        raise GeometryError(f"unsupported layout schema_version {version!r}")
    features = []
    for i, raw in enumerate(data.get("features", [])):
        where = f"features[{i}]"
        try:
            kind = FeatureKind(raw["kind"])
        except (KeyError, ValueError) as exc:
            raise GeometryError(f"{where}: bad or missing kind") from exc
        features.append(StadiumFeature(
            id=str(raw["id"]),
            kind=kind,
            rect=_rect(raw.get("rect"), where),
            name=str(raw.get("name", "")),
            row_spacing=raw.get("row_spacing"),
            col_spacing=raw.get("col_spacing"),
            endpoints=tuple((str(lbl), float(x), float(y)) for lbl, x, y in raw.get("endpoints", [])),
            impassable=bool(raw.get("impassable", False)),
        ))
    by_id = {f.id: f for f in features}
    exits = [ExitPoint(str(raw["id"]), (float(raw["position"][0]), float(raw["position"][1])))
             for raw in data.get("exits", [])]
    regions = []
    for i, raw in enumerate(data.get("regions", [])):
        if "feature" in raw:
            try:
                rect = by_id[raw["feature"]].rect
            except KeyError as exc:
                raise GeometryError(f"regions[{i}]: unknown feature {raw['feature']!r}") from exc
        else:
            rect = _rect(raw.get("rect"), f"regions[{i}]")
        regions.append(Region(str(raw["destination"]), str(raw.get("kind", "region")),
                              str(raw.get("label", raw["destination"])), rect))
    return StadiumModel(
        width=float(data["width"]),
        height=float(data["height"]),
        features=tuple(features),
        exits=tuple(exits),
        regions=tuple(regions),
        name=str(data.get("name", "stadium")),
    )


def layout_to_dict(model: StadiumModel) -> dict:
    feats = []
    for f in model.features:
        d = {"id": f.id, "kind": f.kind.value, "name": f.name, "rect": f.rect.as_list()}
        if f.row_spacing is not None:
            d["row_spacing"] = f.row_spacing
            d["col_spacing"] = f.col_spacing
        if f.endpoints:
            d["endpoints"] = [list(e) for e in f.endpoints]
        if f.impassable:
            d["impassable"] = True
        feats.append(d)
    return {
        "schema_version": LAYOUT_SCHEMA_VERSION,
        "name": model.name,
        "width": model.width,
        "height": model.height,
        "features": feats,
        "exits": [{"id": e.id, "position": list(e.position)} for e in model.exits],
        "regions": [{"destination": r.destination, "kind": r.kind, "label": r.label,
                     "rect": r.rect.as_list()} for r in model.regions],
    }


def load_layout(path: str | Path | None = None) -> StadiumModel:
    """Load a layout file; ``None`` or ``"default"`` gives the shipped layout."""
    if path is None or str(path) == "default":
        text = resources.files("evacsim.data").joinpath(DEFAULT_LAYOUT).read_text()
        return layout_from_dict(load_toml(text=text))
    return layout_from_dict(load_toml(path))


# --------------------------------------------------------------------------
# spatial queries
# --------------------------------------------------------------------------

def containing_feature(model: StadiumModel, p: Point) -> Optional[StadiumFeature]:
    """First feature, in the model's fixed ordering, whose closed rect holds ``p``."""
    if not model.in_canvas(p):
        raise GeometryError(f"point {p} is outside the {model.width}x{model.height} canvas")
    for f in model.features:
        if f.rect.contains(p):
            return f
    return None


class Compass(str, Enum):
    NORTH = "North"
    NORTHEAST = "NorthEast"
    EAST = "East"
    SOUTHEAST = "SouthEast"
    SOUTH = "South"
    SOUTHWEST = "SouthWest"
    WEST = "West"
    NORTHWEST = "NorthWest"


_COMPASS_ORDER = list(Compass)


def compass_bearing(src: Point, dst: Point) -> Compass:
    """Eight-way bearing from ``src`` to ``dst``; each sector spans 45 degrees."""
    dx = dst[0] - src[0]
    dy = dst[1] - src[1]
    if dx == 0 and dy == 0:
        raise GeometryError("bearing between identical points is undefined")
    # clockwise from north, with north = -y on the canvas
    heading = math.degrees(math.atan2(dx, -dy)) % 360.0
    return _COMPASS_ORDER[int((heading + 22.5) // 45.0) % 8]


class DistanceCategory(str, Enum):
    EXTREMELY_CLOSE = "extremely close"
    NEAR = "near"
    MODERATELY_FAR = "moderately far"
    FAR = "far"
    VERY_FAR = "very far"


DISTANCE_BOUNDARIES = (50.0, 150.0, 400.0, 800.0)
_CATEGORY_ORDER = list(DistanceCategory)


def distance_category(d: float) -> DistanceCategory:
    """Half-open bins [0,50) [50,150) [150,400) [400,800) [800,inf)."""
    if d < 0 or math.isnan(d):
        raise GeometryError(f"distance must be non-negative, got {d}")
    for bound, cat in zip(DISTANCE_BOUNDARIES, _CATEGORY_ORDER):
        if d < bound:
            return cat
    return DistanceCategory.VERY_FAR


def clip_segment(a: Point, b: Point, rect: Rect) -> Optional[tuple[float, float]]:
    """Liang-Barsky clip of segment a->b against the closed rect.

    Returns the parameter interval ``(t_enter, t_exit)`` in [0, 1] where the
    segment lies in the rectangle, or ``None`` when they do not meet.
    """
    dx = b[0] - a[0]
    dy = b[1] - a[1]
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, a[0] - rect.x0), (dx, rect.x1 - a[0]),
                 (-dy, a[1] - rect.y0), (dy, rect.y1 - a[1])):
        if p == 0:
            if q < 0:
                return None
            continue
        t = q / p
        if p < 0:
            if t > t1:
                return None
            if t > t0:
                t0 = t
        else:
            if t < t0:
                return None
            if t < t1:
                t1 = t
    return t0, t1


def segment_rect_intersection(a: Point, b: Point, rect: Rect) -> Optional[Point]:
    """Earliest point of segment a->b on the rect, or ``a`` if it starts inside."""
    if rect.contains(a):
        return a
    if a == b:
        return None
    span = clip_segment(a, b, rect)
    if span is None:
        return None
    t = span[0]
    x = a[0] + t * (b[0] - a[0])
    y = a[1] + t * (b[1] - a[1])
    # snap onto the boundary to absorb rounding in t
    x = min(max(x, rect.x0), rect.x1)
    y = min(max(y, rect.y0), rect.y1)
    if abs(x - rect.x0) < 1e-9:
        x = rect.x0
    elif abs(x - rect.x1) < 1e-9:
        x = rect.x1
    if abs(y - rect.y0) < 1e-9:
        y = rect.y0
    elif abs(y - rect.y1) < 1e-9:
        y = rect.y1
    return (x, y)


@dataclass(frozen=True)
class ExitRanking:
    exit: ExitPoint
    distance: float
    bearing: Optional[Compass]  # None when standing exactly on the exit
    category: DistanceCategory


def rank_exits(model: StadiumModel, p: Point, exits: Iterable[ExitPoint] | None = None) -> list[ExitRanking]:
    """All exits sorted by Euclidean distance from ``p``; ties keep exit-id order."""
    pool = list(model.exits if exits is None else exits)
    order = {e.id: i for i, e in enumerate(sorted(pool, key=lambda e: _natural_key(e.id)))}
    ranked = []
    for e in pool:
        d = math.dist(p, e.position)
        bearing = None if d == 0 else compass_bearing(p, e.position)
        ranked.append(ExitRanking(e, d, bearing, distance_category(d)))
    ranked.sort(key=lambda r: (r.distance, order[r.exit.id]))
    return ranked

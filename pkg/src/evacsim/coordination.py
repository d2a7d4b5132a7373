"""Coordinators, the influence/reset protocol and group-arrival synchronization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ._toml import load_toml
from .agents import Agent, AgentState, EventKind, TransitionEvent, is_exit, transition
from .geometry import FeatureKind, GeometryError, Point, Rect, StadiumModel

INFLUENCE_RADIUS = 50.0
REACTION_PROBABILITY = 0.5
DEFAULT_COORDINATOR_COUNT = 50
COORDINATOR_SCHEMA_VERSION = 1


class CoordinationError(ValueError):
    pass


@dataclass(frozen=True)
class Coordinator:
    id: str
    position: Point
    suggested_exit: str
    influence_radius: float = INFLUENCE_RADIUS
    reaction_probability: float = REACTION_PROBABILITY

    def __post_init__(self) -> None:
        if not 0.0 <= self.reaction_probability <= 1.0:
            raise CoordinationError(f"{self.id}: reaction_probability must lie in [0, 1]")
        if self.influence_radius < 0:
            raise CoordinationError(f"{self.id}: influence_radius must be non-negative")

    def validate(self, model: StadiumModel) -> None:
        try:
            model.exit(self.suggested_exit)
        except GeometryError:
            raise CoordinationError(f"{self.id}: suggested exit {self.suggested_exit!r} not in layout") from None
        if not model.in_canvas(self.position):
            raise CoordinationError(f"{self.id}: position {self.position} outside the canvas")


# --------------------------------------------------------------------------
# layouts
# --------------------------------------------------------------------------

def _touch(a: Rect, b: Rect) -> bool:
    return a.x0 <= b.x1 and b.x0 <= a.x1 and a.y0 <= b.y1 and b.y0 <= a.y1


def _anchor_points(model: StadiumModel) -> list[Point]:
    pts: list[Point] = []
    # seating perimeters: midpoint of every edge
    for f in model.features_of(FeatureKind.SEATING):
        r = f.rect
        cx, cy = r.center
        pts += [(cx, r.y0), (r.x1, cy), (cx, r.y1), (r.x0, cy)]
    # pathway intersections: crossing of a vertical and a horizontal pathway
    paths = model.features_of(FeatureKind.PATHWAY)
    vertical = [p.rect for p in paths if p.rect.height > p.rect.width]
    horizontal = [p.rect for p in paths if p.rect.height <= p.rect.width]
    for v in vertical:
        for h in horizontal:
            if _touch(v, h):
                pts.append((v.center[0], h.center[1]))
    # gathering zones
    for kind in (FeatureKind.ACCESSIBILITY, FeatureKind.FAMILY):
        pts += [f.rect.center for f in model.features_of(kind)]
    # tracks: quarter points along the long axis
    for f in model.features_of(FeatureKind.TRACK):
        r = f.rect
        if r.width >= r.height:
            pts += [(r.x0 + r.width / 4, r.center[1]), (r.x0 + 3 * r.width / 4, r.center[1])]
        else:
            pts += [(r.center[0], r.y0 + r.height / 4), (r.center[0], r.y0 + 3 * r.height / 4)]
    return pts


def default_coordinator_layout(model: StadiumModel, reaction_probability: float = REACTION_PROBABILITY,
                               influence_radius: float = INFLUENCE_RADIUS) -> list[Coordinator]:
    """Coordinators at seating edges, aisle crossings, gathering zones and tracks.

    Northern-half coordinators point to Exit1, the rest to Exit3.
    """
    for e in ("Exit1", "Exit3"):
        try:
            model.exit(e)
        except GeometryError:
            raise CoordinationError(f"default coordinator layout needs {e}") from None
    half = model.height / 2
    return [Coordinator(f"C{i + 1:02d}", (float(x), float(y)), "Exit1" if y < half else "Exit3",
                        influence_radius, reaction_probability)
            for i, (x, y) in enumerate(_anchor_points(model))]


def coordinators_from_dict(data: Mapping, model: Optional[StadiumModel] = None) -> list[Coordinator]:
    version = data.get("schema_version", COORDINATOR_SCHEMA_VERSION)
    if version != COORDINATOR_SCHEMA_VERSION:
        raise CoordinationError(f"unsupported coordinator schema_version {version!r}")
    out = []
    for i, c in enumerate(data.get("coordinators", [])):
        try:
            coord = Coordinator(
                id=str(c.get("id", f"C{i + 1:02d}")),
                position=(float(c["position"][0]), float(c["position"][1])),
                suggested_exit=str(c["suggested_exit"]),
                influence_radius=float(c.get("influence_radius", INFLUENCE_RADIUS)),
                reaction_probability=float(c.get("reaction_probability", REACTION_PROBABILITY)),
            )
        except (KeyError, IndexError, TypeError) as exc:
            raise CoordinationError(f"coordinators[{i}]: missing or malformed field {exc}") from None
        if model is not None:
            coord.validate(model)
        out.append(coord)
    ids = [c.id for c in out]
    if len(set(ids)) != len(ids):
        raise CoordinationError("coordinator ids must be unique")
    return out


def coordinators_to_dict(coords: Sequence[Coordinator]) -> dict:
    return {"schema_version": COORDINATOR_SCHEMA_VERSION, "coordinators": [
        {"id": c.id, "position": list(c.position), "suggested_exit": c.suggested_exit,
         "influence_radius": c.influence_radius, "reaction_probability": c.reaction_probability}
        for c in coords]}


def load_coordinator_layout(path: str | Path | None, model: StadiumModel) -> list[Coordinator]:
    """``None`` or "default" gives the built-in 50; "none" gives no coordinators."""
    if path is None or str(path) == "default":
        return default_coordinator_layout(model)
    if str(path) == "none":
        return []
    return coordinators_from_dict(load_toml(path), model)


# --------------------------------------------------------------------------
# group destination tracking
# --------------------------------------------------------------------------

GroupKey = tuple[tuple[int, ...], str]


class GroupTracker:
    """Who in each group picked which non-exit destination, and who got there."""

    def __init__(self) -> None:
        self.chosen: dict[GroupKey, set[int]] = {}
        self.arrived: dict[GroupKey, set[int]] = {}
        self._key_of: dict[int, GroupKey] = {}

    def choose(self, group: tuple[int, ...], destination: str, agent_id: int) -> None:
        self.withdraw(agent_id)
        if is_exit(destination):
            return
        key = (tuple(group), destination)
        self.chosen.setdefault(key, set()).add(agent_id)
        self.arrived.setdefault(key, set())
        self._key_of[agent_id] = key

    def arrive(self, agent_id: int) -> None:
        key = self._key_of.get(agent_id)
        if key is not None:
            self.arrived[key].add(agent_id)

    def withdraw(self, agent_id: int) -> None:
        key = self._key_of.pop(agent_id, None)
        if key is None:
            return
        self.chosen[key].discard(agent_id)
        self.arrived[key].discard(agent_id)
        if not self.chosen[key]:
            del self.chosen[key]
            del self.arrived[key]

    def completed(self) -> list[GroupKey]:
        return sorted(k for k, c in self.chosen.items() if c and c == self.arrived[k])

    def clear(self, key: GroupKey) -> None:
        for aid in self.chosen.pop(key, set()):
            self._key_of.pop(aid, None)
        self.arrived.pop(key, None)

    def check(self) -> None:
        for key, arrived in self.arrived.items():
            if not arrived <= self.chosen.get(key, set()):
                raise AssertionError(f"tracker invariant broken for {key}")

    def to_dict(self) -> dict:
        return {"entries": [
            {"group": list(k[0]), "destination": k[1],
             "chosen": sorted(self.chosen[k]), "arrived": sorted(self.arrived[k])}
            for k in sorted(self.chosen)]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "GroupTracker":
        t = cls()
        for e in data.get("entries", []):
            key = (tuple(e["group"]), e["destination"])
            t.chosen[key] = set(e["chosen"])
            t.arrived[key] = set(e["arrived"])
            for aid in e["chosen"]:
                t._key_of[aid] = key
        return t


def resume_groups(tracker: GroupTracker, agents: Mapping[int, Agent]) -> list[int]:
    """Send every completed (group, destination) set back to discussion."""
    resumed = []
    for key in tracker.completed():
        for aid in sorted(tracker.arrived[key]):
            agent = agents[aid]
            if agent.state is AgentState.WAITING:
                transition(agent, TransitionEvent(EventKind.RESUME))
                resumed.append(aid)
        tracker.clear(key)
    return resumed


# --------------------------------------------------------------------------
# influence
# --------------------------------------------------------------------------

@dataclass
class InfluenceEvent:
    agent_id: int
    coordinator_id: str
    original_destination: str
    suggestion: str
    position: Point
    group_id: tuple[int, ...]
    affected: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"agent": self.agent_id, "coordinator": self.coordinator_id,
                "original_destination": self.original_destination, "suggestion": self.suggestion,
                "position": [round(self.position[0], 1), round(self.position[1], 1)],
                "group": list(self.group_id), "affected": list(self.affected)}


def check_influence(agents: Iterable[Agent], coordinators: Sequence[Coordinator],
                    rng: np.random.Generator) -> list[InfluenceEvent]:
    """One Bernoulli draw per (moving agent, nearby mismatching coordinator).

    Pairs are visited in ascending agent id, then coordinator order, so the
    draw sequence is fixed for a given round state.
    """
    moving = sorted((a for a in agents if a.state is AgentState.MOVING), key=lambda a: a.id)
    if not moving or not coordinators:
        return []
    pos = np.array([a.position for a in moving], dtype=np.float64)
    cpos = np.array([c.position for c in coordinators], dtype=np.float64)
    radius = np.array([c.influence_radius for c in coordinators])
    d = np.hypot(pos[:, None, 0] - cpos[None, :, 0], pos[:, None, 1] - cpos[None, :, 1])
    near = d <= radius[None, :]
    rows, cols = np.nonzero(near)
    events = []
    pairs = [(i, j) for i, j in zip(rows.tolist(), cols.tolist())
             if moving[i].destination != coordinators[j].suggested_exit]
    if not pairs:
        return []
    draws = rng.random(len(pairs))
    for (i, j), u in zip(pairs, draws):
        c = coordinators[j]
        if u < c.reaction_probability:
            a = moving[i]
            events.append(InfluenceEvent(a.id, c.id, a.destination, c.suggested_exit, a.position, a.group_id))
    return events


def influenced_groups(events: Sequence[InfluenceEvent]) -> set[tuple[int, ...]]:
    return {e.group_id for e in events}


def reset_influenced_groups(events: Sequence[InfluenceEvent], agents: Mapping[int, Agent],
                            tracker: Optional[GroupTracker] = None) -> list[int]:
    """Reset every non-exited member of each influenced group; returns reset ids.

    The first event per group (lowest agent id) supplies the hint carried
    into the members' next decision context.
    """
    first: dict[tuple[int, ...], InfluenceEvent] = {}
    for e in events:
        first.setdefault(e.group_id, e)
    reset = []
    for group in sorted(first):
        ev = first[group]
        for aid in group:
            agent = agents[aid]
            if agent.state is AgentState.EXITED:
                continue
            if agent.state is not AgentState.DISCUSSING:
                transition(agent, TransitionEvent(EventKind.COORDINATOR_RESET))
            agent.pending_hint = (ev.coordinator_id, ev.suggestion)
            if tracker is not None:
                tracker.withdraw(aid)
            ev.affected.append(aid)
            reset.append(aid)
    return reset


def near_any_coordinator(positions, coordinators: Sequence[Coordinator], radius: float) -> np.ndarray:
    """Boolean mask: is each position within ``radius`` of some coordinator."""
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if not coordinators or len(pos) == 0:
        return np.zeros(len(pos), dtype=bool)
    cpos = np.array([c.position for c in coordinators], dtype=np.float64)
    out = np.zeros(len(pos), dtype=bool)
    for cx, cy in cpos:
        out |= np.hypot(pos[:, 0] - cx, pos[:, 1] - cy) <= radius
    return out

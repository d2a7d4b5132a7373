"""Environmental context packages handed to each deciding agent."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .agents import Agent, AgentState, destination_label
from .geometry import (
    Compass,
    DistanceCategory,
    ExitRanking,
    FeatureKind,
    Point,
    StadiumFeature,
    StadiumModel,
    compass_bearing,
    containing_feature,
    distance_category,
    rank_exits,
)

MAX_NEARBY_AGENTS = 30
COORDINATOR_HINT_RADIUS = 50.0


class UnknownAgentError(KeyError):
    pass


class AgentSnapshot:
    """Read-only view of agent positions for one round, with a grid index."""

    def __init__(self, agents: Iterable[Agent], cell: float = 20.0):
        self.agents = {a.id: a for a in agents}
        self.cell = cell
        self._grid: dict[tuple[int, int], list[Agent]] = defaultdict(list)
        for a in self.agents.values():
            if a.state is not AgentState.EXITED:
                self._grid[(int(a.position[0] // cell), int(a.position[1] // cell))].append(a)

    def __getitem__(self, agent_id: int) -> Agent:
        try:
            return self.agents[agent_id]
        except KeyError:
            raise UnknownAgentError(agent_id) from None

    def within(self, p: Point, radius: float) -> list[tuple[float, Agent]]:
        """Non-exited agents within ``radius`` of ``p`` as (distance, agent), nearest first."""
        c = self.cell
        reach = int(math.ceil(radius / c))
        cx, cy = int(p[0] // c), int(p[1] // c)
        out = []
        for gx in range(cx - reach, cx + reach + 1):
            for gy in range(cy - reach, cy + reach + 1):
                for a in self._grid.get((gx, gy), ()):
                    d = math.dist(p, a.position)
                    if d <= radius:
                        out.append((d, a))
        out.sort(key=lambda item: (item[0], item[1].id))
        return out


@dataclass(frozen=True)
class Sighting:
    """Something the agent can perceive: a feature or another agent."""

    ref: str
    label: str
    distance: float
    bearing: Optional[Compass]
    category: DistanceCategory


@dataclass(frozen=True)
class Location:
    feature_id: Optional[str]
    kind: Optional[FeatureKind]
    label: str
    row: Optional[int] = None
    column: Optional[int] = None
    endpoints: tuple[tuple[str, Optional[Compass], DistanceCategory], ...] = ()


@dataclass(frozen=True)
class EnvContext:
    agent_id: int
    position: Point
    location: Location
    nearby_features: tuple[Sighting, ...]
    nearby_agents: tuple[Sighting, ...]
    coordinator_hint: Optional[tuple[str, str]]
    exit_rankings: tuple[ExitRanking, ...]
    official_announcement: str = ""
    closed_destinations: tuple[str, ...] = field(default=())
    # suggestion remembered from a coordinator reset in an earlier round
    prior_hint: Optional[tuple[str, str]] = None


def _bearing(src: Point, dst: Point) -> Optional[Compass]:
    return None if src == dst else compass_bearing(src, dst)


def describe_location(model: StadiumModel, p: Point) -> Location:
    f = containing_feature(model, p)
    if f is None:
        return Location(None, None, "an open space between the major stadium features")
    if f.kind is FeatureKind.SEATING and f.row_spacing and f.col_spacing:
        rows = int(f.rect.height // f.row_spacing)
        cols = int(f.rect.width // f.col_spacing)
        row = min(int((p[1] - f.rect.y0) // f.row_spacing), max(rows - 1, 0))
        col = min(int((p[0] - f.rect.x0) // f.col_spacing), max(cols - 1, 0))
        return Location(f.id, f.kind, f.label, row=row, column=col)
    if f.kind is FeatureKind.PATHWAY:
        ends = tuple((label, _bearing(p, (x, y)), distance_category(math.dist(p, (x, y))))
                     for label, x, y in f.endpoints)
        return Location(f.id, f.kind, f.label, endpoints=ends)
    return Location(f.id, f.kind, f.label)


def _feature_sighting(f: StadiumFeature, p: Point) -> Sighting:
    d = f.rect.distance_to(p)
    near = f.rect.nearest_point(p)
    bearing = _bearing(p, near) if near != p else _bearing(p, f.rect.center)
    return Sighting(f.id, f.label, d, bearing, distance_category(d))


def build_context(model: StadiumModel, snapshot: AgentSnapshot, coordinators: Sequence, agent_id: int,
                  announcement: str = "", injected_hint: Optional[tuple[str, str]] = None,
                  max_nearby_agents: int = MAX_NEARBY_AGENTS,
                  closed_destinations: Sequence[str] = (),
                  hint_radius: float = COORDINATOR_HINT_RADIUS) -> EnvContext:
    agent = snapshot[agent_id]
    if agent.state is AgentState.EXITED:
        raise ValueError(f"agent {agent_id} has already exited")
    p = agent.position
    radius = agent.visibility_radius
    location = describe_location(model, p)

    features = [_feature_sighting(f, p) for f in model.features
                if f.id != location.feature_id and f.rect.distance_to(p) <= radius]
    features.sort(key=lambda s: (s.distance, s.ref))

    people = []
    for d, other in snapshot.within(p, radius):
        if other.id == agent_id:
            continue
        people.append(Sighting(str(other.id), other.persona.name, d, _bearing(p, other.position),
                               distance_category(d)))
        if len(people) >= max_nearby_agents:
            break

    hint = None
    best = math.inf
    for c in coordinators:
        d = math.dist(p, c.position)
        if d <= hint_radius and d < best:
            best = d
            hint = (c.id, c.suggested_exit)

    return EnvContext(
        agent_id=agent_id,
        position=p,
        location=location,
        nearby_features=tuple(features),
        nearby_agents=tuple(people),
        coordinator_hint=hint,
        exit_rankings=tuple(rank_exits(model, p)),
        official_announcement=announcement,
        closed_destinations=tuple(closed_destinations),
        prior_hint=injected_hint,
    )


def _direction_phrase(bearing: Optional[Compass]) -> str:
    return "right here" if bearing is None else f"to the {bearing.value}"


def render_context_text(ctx: EnvContext) -> str:
    lines = []
    if ctx.official_announcement:
        lines.append(f"Official announcement: {ctx.official_announcement}")
    loc = ctx.location
    if loc.kind is FeatureKind.SEATING and loc.row is not None:
        lines.append(f"You are in {loc.label}, row {loc.row}, column {loc.column}.")
    elif loc.kind is FeatureKind.PATHWAY:
        lines.append(f"You are on the {loc.label}.")
        for label, bearing, cat in loc.endpoints:
            lines.append(f"  One end of this pathway leads to the {label}, {cat.value}, {_direction_phrase(bearing)}.")
    elif loc.feature_id is None:
        lines.append(f"You are in {loc.label}.")
    else:
        lines.append(f"You are in the {loc.label}.")
    if ctx.nearby_features:
        lines.append("Nearby features:")
        for s in ctx.nearby_features:
            lines.append(f"  - {s.label}, {s.category.value}, {_direction_phrase(s.bearing)}")
    if ctx.nearby_agents:
        lines.append(f"People around you ({len(ctx.nearby_agents)}):")
        for s in ctx.nearby_agents:
            lines.append(f"  - {s.label} (#{s.ref}), {s.category.value}, {_direction_phrase(s.bearing)}")
    if ctx.coordinator_hint is not None:
        cid, exit_id = ctx.coordinator_hint
        lines.append(f"A coordinator ({cid}) is directing people to evacuate through {exit_id}.")
    elif ctx.prior_hint is not None:
        cid, exit_id = ctx.prior_hint
        lines.append(f"Earlier, coordinator {cid} told your group to evacuate through {exit_id}.")
    lines.append("Exits ranked by distance:")
    for i, r in enumerate(ctx.exit_rankings, 1):
        lines.append(f"  {i}. {r.exit.id}: {r.distance:.0f} px, {r.category.value}, {_direction_phrase(r.bearing)}")
    if ctx.closed_destinations:
        closed = ", ".join(destination_label(d) for d in ctx.closed_destinations)
        lines.append(f"Closed because of the threat: {closed}.")
    return "\n".join(lines) + "\n"

"""Agent records, the four-state lifecycle, and destination resolution."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .geometry import GeometryError, Point, StadiumModel

VISIBILITY_RADIUS = 20.0
ARRIVAL_TOLERANCE = 50.0


class AgentCategory(str, Enum):
    WITH_FAMILY = "StudentWithFamilyOutside"
    WITH_FRIENDS = "StudentWithFriendsInside"
    ALONE = "StudentAlone"
    FAMILY_OR_FRIEND = "FamilyOrFriend"


class AgentState(str, Enum):
    DISCUSSING = "DISCUSSING"
    MOVING = "MOVING"
    WAITING = "WAITING"
    EXITED = "EXITED"


EXIT_DESTINATIONS = ("Exit1", "Exit2", "Exit3", "Exit4")
REGION_DESTINATIONS = ("NorthTrack", "SouthTrack", "WestTrack", "EastTrack", "SouthBleachers")
SOCIAL_DESTINATIONS = ("WestFamilyArea", "EastFamilyArea", "WestSeatingArea")
DESTINATIONS = EXIT_DESTINATIONS + REGION_DESTINATIONS + SOCIAL_DESTINATIONS

DESTINATION_LABELS = {
    "NorthTrack": "North side of the stadium, track area",
    "SouthTrack": "South side of the stadium, track area",
    "WestTrack": "West side of the stadium, track area",
    "EastTrack": "East side of the stadium, track area",
    "SouthBleachers": "South bleachers area",
    "WestFamilyArea": "West family and friends area",
    "EastFamilyArea": "East family and friends area",
    "WestSeatingArea": "West seating sections area",
}


def is_exit(destination: str) -> bool:
    return destination.startswith("Exit") and destination[4:].isdigit()


def destination_label(destination: str) -> str:
    if is_exit(destination):
        return f"Exit {destination[4:]}"
    return DESTINATION_LABELS.get(destination, destination)


def destination_catalog(model: StadiumModel) -> list[str]:
    """Every destination the model can resolve: its exits, then its regions."""
    return [e.id for e in model.exits] + [r.destination for r in model.regions]


@dataclass(frozen=True)
class Persona:
    name: str
    background: str
    major: Optional[str] = None
    relationship: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("persona name must be nonempty")


@dataclass(slots=True)
class Agent:
    id: int
    persona: Persona
    category: AgentCategory
    accessibility: bool
    group_id: tuple[int, ...]
    position: Point
    target: Optional[Point] = None
    destination: Optional[str] = None
    state: AgentState = AgentState.DISCUSSING
    visibility_radius: float = VISIBILITY_RADIUS
    chat_log: list = field(default_factory=list)
    decision_history: list = field(default_factory=list)
    # coordinator suggestion carried into the next decision after a reset
    pending_hint: Optional[tuple[str, str]] = None

    @property
    def is_alone(self) -> bool:
        return self.category is AgentCategory.ALONE


class TransitionError(RuntimeError):
    """An event was applied to an agent whose state does not accept it."""


class EventKind(str, Enum):
    DECIDED = "decided"
    ARRIVED = "arrived"
    RESUME = "resume"
    COORDINATOR_RESET = "coordinator_reset"


@dataclass(frozen=True)
class TransitionEvent:
    kind: EventKind
    destination: Optional[str] = None
    target: Optional[Point] = None


# (state, event) -> successor; ARRIVED branches on the destination type
TRANSITIONS = {
    (AgentState.DISCUSSING, EventKind.DECIDED): AgentState.MOVING,
    (AgentState.MOVING, EventKind.ARRIVED): None,
    (AgentState.WAITING, EventKind.RESUME): AgentState.DISCUSSING,
    (AgentState.MOVING, EventKind.COORDINATOR_RESET): AgentState.DISCUSSING,
    (AgentState.WAITING, EventKind.COORDINATOR_RESET): AgentState.DISCUSSING,
}


def transition(agent: Agent, event: TransitionEvent) -> Agent:
    """Apply ``event`` to ``agent`` in place and return it."""
    key = (agent.state, event.kind)
    if key not in TRANSITIONS:
        raise TransitionError(f"agent {agent.id}: no transition from {agent.state.value} on {event.kind.value}")
    if event.kind is EventKind.DECIDED:
        if event.destination is None or event.target is None:
            raise TransitionError("a decision needs both a destination and a target")
        agent.destination = event.destination
        agent.target = event.target
        agent.state = AgentState.MOVING
    elif event.kind is EventKind.ARRIVED:
        if math.dist(agent.position, agent.target) > ARRIVAL_TOLERANCE:
            raise TransitionError(f"agent {agent.id} is not within {ARRIVAL_TOLERANCE} px of its target")
        agent.state = AgentState.EXITED if is_exit(agent.destination) else AgentState.WAITING
    elif event.kind is EventKind.RESUME:
        agent.state = AgentState.DISCUSSING
    else:
        agent.destination = None
        agent.target = None
        agent.state = AgentState.DISCUSSING
    return agent


def resolve_destination(model: StadiumModel, destination: str, rng: np.random.Generator,
                        max_tries: int = 10_000) -> Point:
    """Exit -> its fixed coordinate; region -> uniform point in its rect, off the stage."""
    if is_exit(destination):
        return model.exit(destination).position
    region = model.region(destination)
    obstacles = model.obstacles
    r = region.rect
    for _ in range(max_tries):
        p = (float(rng.uniform(r.x0, r.x1)), float(rng.uniform(r.y0, r.y1)))
        if not any(o.contains(p) for o in obstacles):
            return p
    raise GeometryError(f"region {destination} has no free space outside obstacles")

"""Attendee population: student personas per major, companions, and social groups."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from ._toml import load_toml
from .agents import Agent, AgentCategory, AgentState, Persona
from .geometry import FeatureKind, Rect, StadiumModel, load_layout
from .rng import RngStreams

logger = logging.getLogger(__name__)

POPULATION_SCHEMA_VERSION = 1


class PopulationError(ValueError):
    pass


class GroupKind(str, Enum):
    FAMILY = "FamilyGroup"
    FRIENDS = "FriendGroup"
    SINGLETON = "Singleton"


@dataclass(frozen=True)
class SocialGroup:
    members: tuple[int, ...]
    kind: GroupKind

    def __post_init__(self) -> None:
        object.__setattr__(self, "members", tuple(sorted(self.members)))

    @property
    def id(self) -> tuple[int, ...]:
        return self.members


@dataclass
class PopulationSpec:
    per_major_counts: dict[str, int]
    accessibility_extra: int = 44
    partition: tuple[int, int, int] = (2000, 800, 128)
    family_size_range: tuple[int, int] = (1, 8)
    friend_group_size_range: tuple[int, int] = (3, 10)
    seed: int = 0
    major_sections: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.partition = tuple(int(x) for x in self.partition)
        self.family_size_range = tuple(int(x) for x in self.family_size_range)
        self.friend_group_size_range = tuple(int(x) for x in self.friend_group_size_range)
        self.validate()

    @property
    def base_students(self) -> int:
        return sum(self.per_major_counts.values())

    def validate(self) -> None:
        if any(c < 0 for c in self.per_major_counts.values()):
            raise PopulationError("major counts must be non-negative")
        if len(self.partition) != 3 or any(p < 0 for p in self.partition):
            raise PopulationError("partition must be three non-negative counts")
        if sum(self.partition) != self.base_students:
            raise PopulationError(
                f"partition {self.partition} sums to {sum(self.partition)}, "
                f"expected {self.base_students} base students")
        lo, hi = self.family_size_range
        if not 0 <= lo <= hi <= 8:
            raise PopulationError(f"family_size_range {self.family_size_range} must lie within [0, 8]")
        lo, hi = self.friend_group_size_range
        if not 1 <= lo <= hi <= 10:
            raise PopulationError(f"friend_group_size_range {self.friend_group_size_range} must lie within [1, 10]")
        if self.accessibility_extra < 0:
            raise PopulationError("accessibility_extra must be non-negative")

    def expected_total(self) -> float:
        base = self.base_students
        with_family = self.partition[0] + (self.accessibility_extra * self.partition[0] / base if base else 0)
        return base + self.accessibility_extra + with_family * sum(self.family_size_range) / 2

    def scaled(self, factor: float) -> "PopulationSpec":
        """Same proportions, ``factor`` times the headcount."""
        counts = largest_remainder(self.per_major_counts, round(self.base_students * factor))
        base = sum(counts.values())
        parts = largest_remainder(dict(enumerate(self.partition)), base)
        return replace(self, per_major_counts=counts,
                       partition=(parts[0], parts[1], parts[2]),
                       accessibility_extra=int(round(self.accessibility_extra * factor)))

    def for_total_agents(self, n: int) -> "PopulationSpec":
        return self.scaled(n / self.expected_total())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["partition"] = list(self.partition)
        d["family_size_range"] = list(self.family_size_range)
        d["friend_group_size_range"] = list(self.friend_group_size_range)
        return d


def largest_remainder(weights: dict, total: int) -> dict:
    """Integer apportionment of ``total`` proportional to ``weights``."""
    wsum = sum(weights.values())
    if wsum == 0:
        return {k: 0 for k in weights}
    quotas = {k: total * w / wsum for k, w in weights.items()}
    out = {k: math.floor(q) for k, q in quotas.items()}
    short = total - sum(out.values())
    order = sorted(weights, key=lambda k: (-(quotas[k] - out[k]), list(weights).index(k)))
    for k in order[:short]:
        out[k] += 1
    return out


def spec_from_dict(data: dict) -> PopulationSpec:
    if data.get("schema_version", POPULATION_SCHEMA_VERSION) != POPULATION_SCHEMA_VERSION:
        raise PopulationError(f"unsupported population schema_version {data.get('schema_version')!r}")
    return PopulationSpec(
        per_major_counts={str(k): int(v) for k, v in data["per_major_counts"].items()},
        accessibility_extra=int(data.get("accessibility_extra", 44)),
        partition=tuple(data.get("partition", (2000, 800, 128))),
        family_size_range=tuple(data.get("family_size_range", (1, 8))),
        friend_group_size_range=tuple(data.get("friend_group_size_range", (3, 10))),
        seed=int(data.get("seed", 0)),
        major_sections={str(k): list(v) for k, v in data.get("major_sections", {}).items()},
    )


def load_population_spec(path: str | Path | None = None) -> PopulationSpec:
    if path is None or str(path) == "default":
        text = resources.files("evacsim.data").joinpath("default_population.toml").read_text()
        return spec_from_dict(load_toml(text=text))
    return spec_from_dict(load_toml(path))


# --------------------------------------------------------------------------
# persona backends
# --------------------------------------------------------------------------

class PersonaBackend(Protocol):
    def student_personas(self, major: str, count: int, accessibility: bool, batch: str) -> list[Persona]: ...

    def companion_personas(self, requests: Sequence[tuple[Persona, int]]) -> list[list[Persona]]: ...


_FIRST = ["Avery", "Jordan", "Priya", "Mateo", "Hannah", "Wei", "Fatima", "Lucas", "Amara", "Noah",
          "Sofia", "Kenji", "Isabel", "Omar", "Grace", "Diego", "Leah", "Tariq", "Mei", "Samuel",
          "Chloe", "Andre", "Nadia", "Elijah", "Yara", "Caleb", "Ines", "Marcus", "Anika", "Ruben"]
_LAST = ["Nguyen", "Patel", "Garcia", "Kim", "Okafor", "Schmidt", "Hernandez", "Cohen", "Silva",
         "Johnson", "Li", "Rossi", "Haddad", "Brown", "Tanaka", "Novak", "Mensah", "Lopez", "Reyes",
         "Murphy", "Ali", "Fischer", "Costa", "Wright", "Singh", "Moreau", "Ivanova", "Bauer"]
_INTERESTS = {
    "Engineering": "spent senior year on a capstone robotics project",
    "Business": "ran the campus entrepreneurship club",
    "Computer Science": "built a course-scheduling app used across campus",
    "Biological Sciences": "worked in a field ecology lab every summer",
    "Psychology": "volunteered at the campus counseling peer line",
    "Economics": "interned at a regional policy institute",
    "Communication": "hosted a weekly show on the student radio station",
    "Nursing": "completed clinical rotations at the county hospital",
    "Political Science": "organized voter-registration drives",
    "Mathematics": "tutored calculus in the learning center",
}
_CIRCUMSTANCES = ["is the first in the family to graduate", "commutes from a nearby town",
                  "is starting a job in another state next month", "plans to begin graduate school",
                  "works part-time at the campus library", "is an international student",
                  "transferred from a community college", "played intramural soccer for four years"]
_RELATIONS = ["mother", "father", "grandparent", "sibling", "aunt", "uncle", "cousin", "partner", "family friend"]


def _seeded(*parts) -> random.Random:
    digest = hashlib.sha256("|".join(map(str, parts)).encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class StubPersonaBackend:
    """Template personas that depend only on (seed, request), never on call order."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def student_personas(self, major, count, accessibility, batch):
        out = []
        for i in range(count):
            r = _seeded(self.seed, "student", batch, i)
            name = f"{r.choice(_FIRST)} {r.choice(_LAST)}"
            interest = _INTERESTS.get(major, f"focused on {major.lower()} coursework")
            background = f"{name} is a graduating {major} student who {interest} and {r.choice(_CIRCUMSTANCES)}."
            if accessibility:
                background += " Uses a wheelchair and needs step-free routes."
            out.append(Persona(name=name, background=background, major=major))
        return out

    def companion_personas(self, requests):
        out = []
        for student, count in requests:
            group = []
            surname = student.name.split()[-1]
            for i in range(count):
                r = _seeded(self.seed, "companion", student.name, student.background, i)
                rel = r.choice(_RELATIONS)
                name = f"{r.choice(_FIRST)} {surname}"
                background = (f"{name} is {student.name}'s {rel}, attending the ceremony to celebrate "
                              f"the graduation and meeting up afterwards.")
                group.append(Persona(name=name, background=background, relationship=rel))
            out.append(group)
        return out


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------

def partition_students(students: Sequence[int], partition: Sequence[int], rng: np.random.Generator):
    """Seeded shuffle then split into the three partition sizes."""
    need = sum(partition)
    if len(students) < need:
        raise PopulationError(f"need {need} students for partition {tuple(partition)}, have {len(students)}")
    shuffled = [students[i] for i in rng.permutation(len(students))][:need]
    a, b, _ = partition
    return sorted(shuffled[:a]), sorted(shuffled[a:a + b]), sorted(shuffled[a + b:])


def form_friend_groups(pool: Sequence[int], size_range: Sequence[int], rng: np.random.Generator) -> list[SocialGroup]:
    """Draw groups of random size until the pool is used up; the last may be short."""
    lo, hi = size_range
    remaining = [pool[i] for i in rng.permutation(len(pool))]
    groups = []
    while remaining:
        size = int(rng.integers(lo, hi + 1))
        chunk, remaining = remaining[:size], remaining[size:]
        groups.append(SocialGroup(tuple(chunk), GroupKind.FRIENDS))
    return groups


def _with_retries(fn, label: str, retries: int):
    last = None
    for attempt in range(retries + 1):
        try:
            return fn()
        except Exception as exc:  # backend errors are opaque here
            last = exc
            logger.warning("persona batch %s failed (attempt %d): %s", label, attempt + 1, exc)
    raise PopulationError(f"persona generation failed for batch {label!r}: {last}") from last


def _place(rng: np.random.Generator, rects: Sequence[Rect]) -> tuple[float, float]:
    areas = np.array([r.width * r.height for r in rects])
    r = rects[int(rng.choice(len(rects), p=areas / areas.sum()))] if len(rects) > 1 else rects[0]
    return (round(float(rng.uniform(r.x0, r.x1)), 1), round(float(rng.uniform(r.y0, r.y1)), 1))


def generate_population(spec: PopulationSpec, backend: PersonaBackend | None = None,
                        model: StadiumModel | None = None, retries: int = 2):
    """Build agents and social groups; deterministic for a fixed spec with the stub backend."""
    backend = backend or StubPersonaBackend(spec.seed)
    model = model or load_layout()
    streams = RngStreams(spec.seed)
    rng = streams["population"]
    place_rng = streams["placement"]

    majors = list(spec.per_major_counts)
    acc_counts = largest_remainder(spec.per_major_counts, spec.accessibility_extra)

    student_personas: list[tuple[Persona, bool]] = []
    for major in majors:
        batch = f"{major}:{spec.per_major_counts[major]}"
        ps = _with_retries(lambda: backend.student_personas(major, spec.per_major_counts[major], False, batch),
                           batch, retries)
        student_personas.extend((p, False) for p in ps)
    base_ids = list(range(len(student_personas)))
    for major in majors:
        if acc_counts[major] == 0:
            continue
        batch = f"{major}:accessibility:{acc_counts[major]}"
        ps = _with_retries(lambda: backend.student_personas(major, acc_counts[major], True, batch),
                           batch, retries)
        student_personas.extend((p, True) for p in ps)
    acc_ids = list(range(len(base_ids), len(student_personas)))

    with_family, with_friends, alone = partition_students(base_ids, spec.partition, rng)
    # accessibility students join a category uniformly at random
    for sid in acc_ids:
        [with_family, with_friends, alone][int(rng.integers(0, 3))].append(sid)
    with_family.sort()
    with_friends.sort()
    alone.sort()

    category = {}
    for sid in with_family:
        category[sid] = AgentCategory.WITH_FAMILY
    for sid in with_friends:
        category[sid] = AgentCategory.WITH_FRIENDS
    for sid in alone:
        category[sid] = AgentCategory.ALONE

    lo, hi = spec.family_size_range
    family_sizes = [int(rng.integers(lo, hi + 1)) for _ in with_family]
    companions = _with_retries(
        lambda: backend.companion_personas([(student_personas[s][0], k) for s, k in zip(with_family, family_sizes)]),
        "companions", retries)

    records: list[tuple[Persona, AgentCategory, bool]] = [
        (p, category[i], acc) for i, (p, acc) in enumerate(student_personas)]
    groups: list[SocialGroup] = []
    for sid, people in zip(with_family, companions):
        ids = [sid]
        for p in people:
            ids.append(len(records))
            records.append((p, AgentCategory.FAMILY_OR_FRIEND, False))
        groups.append(SocialGroup(tuple(ids), GroupKind.FAMILY if len(ids) > 1 else GroupKind.SINGLETON))
    groups.extend(form_friend_groups(with_friends, spec.friend_group_size_range, rng))
    groups.extend(SocialGroup((sid,), GroupKind.SINGLETON) for sid in alone)
    groups.sort(key=lambda g: g.members)

    group_of = {m: g.id for g in groups for m in g.members}
    sections = {f.id: f.rect for f in model.features_of(FeatureKind.SEATING)}
    seating = list(sections.values())
    access_rects = [f.rect for f in model.features_of(FeatureKind.ACCESSIBILITY)] or seating
    family_rects = ([f.rect for f in model.features_of(FeatureKind.FAMILY)]
                    + [f.rect for f in model.features_of(FeatureKind.BLEACHER)]) or seating

    agents = []
    for aid, (persona, cat, acc) in enumerate(records):
        if cat is AgentCategory.FAMILY_OR_FRIEND:
            pos = _place(place_rng, family_rects)
        elif acc:
            pos = _place(place_rng, access_rects)
        else:
            ids = spec.major_sections.get(persona.major or "", [])
            rects = [sections[s] for s in ids if s in sections] or seating
            pos = _place(place_rng, [rects[int(place_rng.integers(0, len(rects)))]])
        agents.append(Agent(id=aid, persona=persona, category=cat, accessibility=acc,
                            group_id=group_of[aid], position=pos))
    return agents, groups


def generate_scaled_population(spec: PopulationSpec, total: Optional[int] = None,
                               backend: PersonaBackend | None = None, model: StadiumModel | None = None,
                               retries: int = 2, iterations: int = 4):
    """Population in the spec's proportions whose headcount lands close to ``total``.

    Family sizes are random, so the scale factor is corrected from the
    realized headcount a few times and the closest draw is kept.
    """
    if total is None:
        return generate_population(spec, backend, model, retries)
    if total < 1:
        raise PopulationError("total must be positive")
    factor = total / spec.expected_total()
    best = None
    for _ in range(iterations):
        agents, groups = generate_population(spec.scaled(factor), backend, model, retries)
        if best is None or abs(len(agents) - total) < abs(len(best[0]) - total):
            best = (agents, groups)
        if len(agents) == total or not agents:
            break
        factor *= total / len(agents)
    return best


# --------------------------------------------------------------------------
# population files
# --------------------------------------------------------------------------

def population_to_dict(agents: Sequence[Agent], groups: Sequence[SocialGroup],
                       spec: Optional[PopulationSpec] = None) -> dict:
    return {
        "schema_version": POPULATION_SCHEMA_VERSION,
        "spec": spec.to_dict() if spec else None,
        "total_agents": len(agents),
        "agents": [{
            "id": a.id,
            "name": a.persona.name,
            "background": a.persona.background,
            "major": a.persona.major,
            "relationship": a.persona.relationship,
            "category": a.category.value,
            "accessibility": a.accessibility,
            "group": list(a.group_id),
            "position": [a.position[0], a.position[1]],
        } for a in agents],
        "groups": [{"members": list(g.members), "kind": g.kind.value} for g in groups],
    }


def population_from_dict(data: dict):
    if data.get("schema_version") != POPULATION_SCHEMA_VERSION:
        raise PopulationError(f"unsupported population schema_version {data.get('schema_version')!r}")
    agents = [Agent(
        id=int(d["id"]),
        persona=Persona(d["name"], d["background"], d.get("major"), d.get("relationship")),
        category=AgentCategory(d["category"]),
        accessibility=bool(d["accessibility"]),
        group_id=tuple(d["group"]),
        position=(float(d["position"][0]), float(d["position"][1])),
        state=AgentState.DISCUSSING,
    ) for d in data["agents"]]
    groups = [SocialGroup(tuple(g["members"]), GroupKind(g["kind"])) for g in data["groups"]]
    return agents, groups


def dump_population(path: str | Path, agents, groups, spec=None) -> None:
    text = json.dumps(population_to_dict(agents, groups, spec), sort_keys=True, indent=1)
    Path(path).write_text(text + "\n")


def load_population(path: str | Path):
    return population_from_dict(json.loads(Path(path).read_text()))

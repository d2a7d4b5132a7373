"""Message misinterpretation grid and scripted information-propagation runs."""

from __future__ import annotations

import hashlib
import logging
import math
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import numpy as np

from ._toml import load_toml
from .rng import stream

logger = logging.getLogger(__name__)

WARNING_PREFIX = "WARNING: This piece of content might contain misinformation"
DIFFUSION_FRACTION = 0.7
EXTREME_THRESHOLD = 60
SCRIPT_SCHEMA_VERSION = 1


class CommState(str, Enum):
    ACTIVE = "ACTIVE"
    INACTIVE = "INACTIVE"


class Action(str, Enum):
    IDLE = "IDLE"
    SPREAD = "SPREAD"
    EVACUATE = "EVACUATE"


@dataclass(frozen=True)
class CommPersona:
    name: str
    background: str
    propensity: float = 0.0  # 0 = reads messages literally, 1 = freely reinterprets

    def __post_init__(self) -> None:
        if not 0.0 <= self.propensity <= 1.0:
            raise ValueError("propensity must lie in [0, 1]")


@dataclass
class CommAgent:
    id: int
    persona: CommPersona
    state: CommState = CommState.ACTIVE
    rewards: list[str] = field(default_factory=list)
    # one transcript per decision type, never shared
    decision_history: list[str] = field(default_factory=list)
    action_history: list[str] = field(default_factory=list)
    update_history: list[str] = field(default_factory=list)

    @property
    def name(self) -> str:
        return self.persona.name

    def clear_histories(self) -> None:
        self.decision_history.clear()
        self.action_history.clear()
        self.update_history.clear()


@dataclass(frozen=True)
class MisinterpretationRecord:
    agent: int
    message: int
    interpretation: Optional[str]
    reaction: Optional[str]
    score: Optional[int]
    extreme_reaction: Optional[str]
    threshold: int = EXTREME_THRESHOLD
    error: Optional[str] = None

    def __post_init__(self) -> None:
        if self.error is not None:
            return
        if self.score is None or not 0 <= self.score <= 100:
            raise ValueError(f"score {self.score} outside 0..100")
        if (self.extreme_reaction is not None) != (self.score > self.threshold):
            raise ValueError("extreme_reaction must be present exactly when score exceeds the threshold")


@dataclass(frozen=True)
class DiffusionEvent:
    section: int
    round: int
    source: int
    content: str
    recipients: frozenset[int]
    moderated: bool

    def __post_init__(self) -> None:
        if self.moderated and not self.content.startswith(WARNING_PREFIX):
            raise ValueError("moderated content must carry the warning prefix")


class CommBackend(Protocol):
    def generate_agents(self, n: int) -> list[CommPersona]: ...

    def interpret(self, persona: CommPersona, message: str) -> tuple[str, str]: ...

    def assess(self, message: str, interpretation: str, reaction: str) -> int: ...

    def extreme(self, persona: CommPersona, message: str, interpretation: str) -> str: ...

    def choose_action(self, agent: CommAgent, inputs: Sequence[str]) -> Action: ...

    def compose(self, agent: CommAgent, inputs: Sequence[str]) -> str: ...

    def update(self, agent: CommAgent, feedback: str) -> str: ...


# --------------------------------------------------------------------------
# stub backend
# --------------------------------------------------------------------------

_WORD = re.compile(r"[a-z0-9']+")


def tokens(text: str) -> set[str]:
    return set(_WORD.findall(text.casefold()))


def token_overlap_score(message: str, interpretation: str) -> int:
    """0 for identical vocabularies, 100 for disjoint ones (Jaccard distance)."""
    a, b = tokens(message), tokens(interpretation)
    if not a and not b:
        return 0
    return int(round(100 * (1 - len(a & b) / len(a | b))))


def _rand(*parts) -> random.Random:
    return random.Random(int.from_bytes(hashlib.sha256("|".join(map(str, parts)).encode()).digest()[:8], "big"))


_NAMES = ["Riley", "Sam", "Morgan", "Alex", "Casey", "Jamie", "Taylor", "Quinn", "Drew", "Rowan",
          "Emerson", "Parker", "Skyler", "Reese", "Hayden", "Sawyer"]
_ROLES = ["first-year student", "graduate teaching assistant", "campus shuttle driver", "dining hall cook",
          "visiting parent", "resident advisor", "library staff member", "varsity athlete"]
_ALARM = ["panic", "danger", "run", "now", "everyone", "lockdown", "rumor", "chaos", "hidden", "cover-up"]

ActionRule = Union[str, Callable[[CommAgent, Sequence[str]], Action]]


class StubCommBackend:
    """Deterministic offline backend.

    Interpretations drop and swap words in proportion to the persona's
    propensity; ``forced_score`` overrides the scorer; ``action_rule`` is
    "idle", "spread", "evacuate", "mixed" or a callable.
    """

    def __init__(self, seed: int = 0, forced_score: Optional[int] = None, action_rule: ActionRule = "mixed",
                 propensity_range: tuple[float, float] = (0.0, 1.0)):
        self.seed = seed
        self.forced_score = forced_score
        self.action_rule = action_rule
        self.propensity_range = propensity_range

    def generate_agents(self, n: int) -> list[CommPersona]:
        lo, hi = self.propensity_range
        out = []
        for i in range(n):
            r = _rand(self.seed, "agent", i)
            name = f"{r.choice(_NAMES)} {i}"
            out.append(CommPersona(name, f"{name} is a {r.choice(_ROLES)}.", round(r.uniform(lo, hi), 3)))
        return out

    def interpret(self, persona, message):
        r = _rand(self.seed, "interpret", persona.name, message)
        words = message.split()
        kept = [w for w in words if r.random() >= persona.propensity * 0.6]
        extra = [r.choice(_ALARM) for _ in range(int(round(persona.propensity * 4)))]
        interpretation = " ".join(kept + extra)
        reaction = f"{persona.name} reads it as: {interpretation}"
        return interpretation, reaction

    def assess(self, message, interpretation, reaction):
        if self.forced_score is not None:
            return int(self.forced_score)
        return token_overlap_score(message, interpretation)

    def extreme(self, persona, message, interpretation):
        return f"{persona.name} tells everyone nearby that '{interpretation}' means they must leave immediately."

    def choose_action(self, agent, inputs):
        if callable(self.action_rule):
            return self.action_rule(agent, inputs)
        if self.action_rule in ("idle", "spread", "evacuate"):
            return Action(self.action_rule.upper())
        u = _rand(self.seed, "act", agent.id, len(agent.decision_history), *inputs).random()
        p = agent.persona.propensity
        if u < 0.2 + 0.3 * p:
            return Action.SPREAD
        if u < 0.45 + 0.3 * p:
            return Action.EVACUATE
        return Action.IDLE

    def compose(self, agent, inputs):
        return f"{agent.name} passes on: {inputs[-1]}" if inputs else f"{agent.name} has nothing to add."

    def update(self, agent, feedback):
        return f"{agent.name} learned: {feedback}"


# --------------------------------------------------------------------------
# misinterpretation
# --------------------------------------------------------------------------

def run_misinterpretation(n_agents: int, messages: Sequence[str], threshold: int = EXTREME_THRESHOLD,
                          backend: Optional[CommBackend] = None) -> list[MisinterpretationRecord]:
    """Every generated agent reads every message; an independent assessor scores each reading."""
    if n_agents < 1 or not messages:
        raise ValueError("need at least one agent and one message")
    if not 0 <= threshold <= 100:
        raise ValueError("threshold must lie in 0..100")
    backend = backend or StubCommBackend()
    personas = backend.generate_agents(n_agents)
    if len(personas) != n_agents:
        raise ValueError(f"backend produced {len(personas)} agents, expected {n_agents}")
    records = []
    for ai, persona in enumerate(personas):
        for mi, msg in enumerate(messages):
            try:
                interp, reaction = backend.interpret(persona, msg)
                score = int(backend.assess(msg, interp, reaction))
                if not 0 <= score <= 100:
                    raise ValueError(f"assessor returned {score}")
                extreme = backend.extreme(persona, msg, interp) if score > threshold else None
                records.append(MisinterpretationRecord(ai, mi, interp, reaction, score, extreme, threshold))
            except Exception as exc:  # one failed pair must not sink the grid
                logger.warning("pair (%d, %d) failed: %r", ai, mi, exc)
                records.append(MisinterpretationRecord(ai, mi, None, None, None, None, threshold, repr(exc)))
    return records


# --------------------------------------------------------------------------
# propagation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Injection:
    recipients: Optional[frozenset[int]]  # None means every agent
    source: str
    content: str

    def reaches(self, agent_id: int) -> bool:
        return self.recipients is None or agent_id in self.recipients


@dataclass(frozen=True)
class Section:
    name: str
    rounds: tuple[tuple[Injection, ...], ...]
    feedback: str = ""


@dataclass(frozen=True)
class ScenarioScript:
    sections: tuple[Section, ...]

    def __post_init__(self) -> None:
        if not self.sections:
            raise ValueError("a script needs at least one section")


def script_from_dict(data: dict) -> ScenarioScript:
    if data.get("schema_version", SCRIPT_SCHEMA_VERSION) != SCRIPT_SCHEMA_VERSION:
        raise ValueError(f"unsupported script schema_version {data.get('schema_version')!r}")
    sections = []
    for s in data.get("sections", []):
        rounds = []
        for r in s.get("rounds", []):
            inj = []
            for i in r.get("injections", []):
                rec = i.get("recipients", "all")
                inj.append(Injection(None if rec == "all" else frozenset(int(x) for x in rec),
                                     str(i.get("source", "unknown")), str(i["content"])))
            rounds.append(tuple(inj))
        sections.append(Section(str(s.get("name", f"section {len(sections) + 1}")), tuple(rounds),
                                str(s.get("feedback", ""))))
    return ScenarioScript(tuple(sections))


def load_script(path: str | Path) -> ScenarioScript:
    return script_from_dict(load_toml(path))


def sample_recipients(n_agents: int, source: int, rng: np.random.Generator,
                      fraction: float = DIFFUSION_FRACTION) -> frozenset[int]:
    """floor(fraction * N) distinct agents, never the source itself."""
    k = math.floor(fraction * n_agents + 1e-9)
    others = np.array([i for i in range(n_agents) if i != source])
    k = min(k, len(others))
    return frozenset(int(x) for x in rng.choice(others, size=k, replace=False)) if k else frozenset()


def moderate(content: str) -> str:
    return f"{WARNING_PREFIX}\n{content}"


@dataclass
class PropagationResult:
    outcomes: list[dict]
    events: list[DiffusionEvent]
    log: list[dict]


def run_propagation(script: ScenarioScript, agents: Union[int, Sequence[CommAgent]], moderated: bool = False,
                    backend: Optional[CommBackend] = None, seed: int = 0) -> PropagationResult:
    backend = backend or StubCommBackend(seed)
    if isinstance(agents, int):
        agents = [CommAgent(i, p) for i, p in enumerate(backend.generate_agents(agents))]
    agents = list(agents)
    n = len(agents)
    rng = stream(seed, "commsim")
    events: list[DiffusionEvent] = []
    outcomes: list[dict] = []
    log: list[dict] = []
    for si, section in enumerate(script.sections):
        for a in agents:
            a.state = CommState.ACTIVE
        pending: dict[int, list[str]] = {}
        section_events = 0
        for ri, injections in enumerate(section.rounds):
            inputs = {a.id: [f"{inj.source}: {inj.content}" for inj in injections if inj.reaches(a.id)]
                      for a in agents}
            for aid, extra in pending.items():
                inputs[aid].extend(extra)
            pending = {}
            acts = {}
            for a in agents:
                if a.state is not CommState.ACTIVE or not inputs[a.id]:
                    continue
                try:
                    act = Action(backend.choose_action(a, inputs[a.id]))
                except Exception as exc:
                    logger.warning("agent %d decision failed: %r", a.id, exc)
                    act = Action.IDLE
                a.decision_history.append(act.value)
                if act is Action.SPREAD:
                    try:
                        content = backend.compose(a, inputs[a.id])
                    except Exception as exc:
                        logger.warning("agent %d content generation failed: %r", a.id, exc)
                        act = Action.IDLE
                    else:
                        if moderated:
                            content = moderate(content)
                        ev = DiffusionEvent(si, ri, a.id, content, sample_recipients(n, a.id, rng), moderated)
                        events.append(ev)
                        section_events += 1
                        for r in sorted(ev.recipients):
                            pending.setdefault(r, []).append(f"{a.name}: {content}")
                        a.action_history.append(content)
                if act is Action.EVACUATE:
                    a.state = CommState.INACTIVE
                acts[a.id] = act.value
            log.append({"section": si, "round": ri, "actions": acts,
                        "inactive": sorted(a.id for a in agents if a.state is CommState.INACTIVE)})
        evacuated = sorted(a.id for a in agents if a.state is CommState.INACTIVE)
        outcomes.append({"section": section.name, "evacuated": evacuated, "diffusion_events": section_events,
                         "feedback": section.feedback})
        for a in agents:
            note = backend.update(a, section.feedback) if section.feedback else None
            a.clear_histories()
            if note:
                a.rewards.append(note)
                a.update_history.append(note)
            a.state = CommState.ACTIVE
    return PropagationResult(outcomes, events, log)

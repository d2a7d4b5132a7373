"""Round-based simulation loop, round logs, snapshots, metrics and replays.

Each round runs five phases in a fixed order:

1. resume groups whose chosen destination everyone reached;
2. coordinator influence and group resets;
3. decisions for every DISCUSSING agent, applied in ascending agent id;
4. density, movement of agents that were already MOVING, arrival checks;
5. round log and periodic snapshot.

Agents that decide in a round are checked for arrival that round but only
start walking in the next one.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .agents import (
    Agent,
    AgentState,
    EventKind,
    TransitionEvent,
    is_exit,
    resolve_destination,
    transition,
)
from .context import MAX_NEARBY_AGENTS, AgentSnapshot, build_context, render_context_text
from .coordination import (
    Coordinator,
    GroupTracker,
    check_influence,
    coordinators_from_dict,
    coordinators_to_dict,
    load_coordinator_layout,
    near_any_coordinator,
    reset_influenced_groups,
    resume_groups,
)
from .decisions import (
    BackendConfig,
    DecisionFailure,
    DecisionPolicy,
    DecisionRequest,
    decide_batch,
    make_stub,
    protocol_for,
)
from .geometry import StadiumModel, layout_from_dict, layout_to_dict
from .movement import DEFAULT_SPEED, SpeedParams, adjusted_speed, check_arrival, compute_density, step_position
from .population import (
    SocialGroup,
    generate_scaled_population,
    load_population_spec,
    population_from_dict,
    population_to_dict,
)
from .rng import RngStreams
from .scenarios import Scenario, apply_threat_constraints, closed_destinations, default_scenario, load_scenario

logger = logging.getLogger(__name__)

LOG_SCHEMA_VERSION = 1
SNAPSHOT_SCHEMA_VERSION = 1
REPLAY_FORMAT = "evacsim-replay"
REPLAY_VERSION = 1
DEFAULT_MAX_ROUNDS = 1000

_STATE_CODE = {AgentState.DISCUSSING: "D", AgentState.MOVING: "M", AgentState.WAITING: "W",
               AgentState.EXITED: "X"}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class RunConfig:
    scenario: Any = None  # Scenario, path, or None for the built-in severe-weather scenario
    seed: Optional[int] = None
    max_rounds: int = DEFAULT_MAX_ROUNDS
    save_every: int = 0
    policy: str = "nearest-exit"
    backend: Optional[BackendConfig] = None
    out_dir: Optional[Path] = None
    chat_window: Optional[int] = None
    max_nearby_agents: int = MAX_NEARBY_AGENTS
    speed: SpeedParams = DEFAULT_SPEED
    coordinator_boost: bool = True
    population_size: Optional[int] = None

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.save_every < 0:
            raise ValueError("save_every must be non-negative")


@dataclass
class RunResult:
    logs: list[dict]
    termination: str
    total: int
    exit_counts: dict[str, int]
    influence_event_count: int
    timing: list[dict] = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return len(self.logs)

    @property
    def exited(self) -> int:
        return self.logs[-1]["exited_count"] if self.logs else 0

    def metrics(self, fractions: Sequence[float] = (0.8,)) -> dict:
        return {f"{f:g}": metric_evacuation_time(self.logs, f) for f in fractions}


class Simulation:
    def __init__(self, model: StadiumModel, agents: Sequence[Agent], groups: Sequence[SocialGroup],
                 coordinators: Sequence[Coordinator], policy: DecisionPolicy, *, seed: int = 0,
                 max_rounds: int = DEFAULT_MAX_ROUNDS, announcement: str = "",
                 allowed_destinations: Optional[Sequence[str]] = None, closed: Sequence[str] = (),
                 speed: SpeedParams = DEFAULT_SPEED, coordinator_boost: bool = True,
                 backend_config: Optional[BackendConfig] = None, chat_window: Optional[int] = None,
                 max_nearby_agents: int = MAX_NEARBY_AGENTS):
        if max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        self.model = model
        self.agents = {a.id: a for a in sorted(agents, key=lambda a: a.id)}
        self.groups = list(groups)
        self.coordinators = list(coordinators)
        self.policy = policy
        self.seed = seed
        self.rng = RngStreams(seed)
        self.max_rounds = max_rounds
        self.announcement = announcement
        self.allowed = tuple(allowed_destinations or [e.id for e in model.exits] +
                             [r.destination for r in model.regions])
        self.closed = tuple(closed)
        self.speed = speed
        self.coordinator_boost = coordinator_boost
        self.backend_config = backend_config or BackendConfig()
        self.chat_window = chat_window
        self.max_nearby_agents = max_nearby_agents
        self.tracker = GroupTracker()
        self.chat: dict[tuple[int, ...], list[str]] = {}
        self.round = 0
        self.exited_count = sum(a.state is AgentState.EXITED for a in self.agents.values())
        self.exit_counts: dict[str, int] = {}
        self.influence_event_count = 0
        self.logs: list[dict] = []
        self.timing: list[dict] = []

    @property
    def total(self) -> int:
        return len(self.agents)

    @property
    def done(self) -> bool:
        return self.exited_count == self.total or self.round >= self.max_rounds

    @property
    def termination(self) -> Optional[str]:
        if self.exited_count == self.total:
            return "all exited"
        if self.round >= self.max_rounds:
            return "round limit"
        return None

    # ---- phases -----------------------------------------------------------

    def _requests(self, deciding: list[Agent]) -> list[DecisionRequest]:
        snap = AgentSnapshot(self.agents.values())
        out = []
        for a in deciding:
            ctx = build_context(self.model, snap, self.coordinators, a.id, self.announcement,
                                injected_hint=a.pending_hint, max_nearby_agents=self.max_nearby_agents,
                                closed_destinations=self.closed)
            history = self.chat.get(a.group_id, []) if not a.is_alone else []
            if self.chat_window is not None:
                history = history[-self.chat_window:] if self.chat_window else []
            out.append(DecisionRequest(
                agent_id=a.id, persona=a.persona, category=a.category,
                context_text=render_context_text(ctx), group_chat_history=tuple(history),
                protocol=protocol_for(a.category), allowed_destinations=self.allowed,
                context=ctx, round_index=self.round))
        return out

    def _apply(self, results: dict, messages: list, decisions: list) -> set[int]:
        decided = set()
        for aid in sorted(results):
            res = results[aid]
            agent = self.agents[aid]
            if isinstance(res, DecisionFailure):
                decisions.append({"agent": aid, "failed": True, "error": res.error})
                continue
            entry = {"agent": aid, "decided": res.decided, "destination": res.destination}
            if res.message:
                line = f"{agent.persona.name}: {res.message}"
                self.chat.setdefault(agent.group_id, []).append(line)
                messages.append({"agent": aid, "group": list(agent.group_id), "text": res.message})
            if res.decided and res.destination not in self.allowed:
                entry.update(decided=False, rejected=True)
                res = replace(res, decided=False, destination=None)
            decisions.append(entry)
            if not res.decided:
                continue
            target = resolve_destination(self.model, res.destination, self.rng["destination"])
            transition(agent, TransitionEvent(EventKind.DECIDED, res.destination, target))
            agent.pending_hint = None
            agent.decision_history.append((self.round, res.destination))
            self.tracker.choose(agent.group_id, res.destination, aid)
            decided.add(aid)
        return decided

    def _move(self, newly_decided: set[int]) -> list[list]:
        moving = [a for a in self.agents.values() if a.state is AgentState.MOVING]
        exits = []
        if not moving:
            return exits
        pos = np.array([a.position for a in moving], dtype=np.float64)
        density = compute_density(pos, self.speed.density_radius)
        boost = (near_any_coordinator(pos, self.coordinators, self.speed.coordinator_boost_radius)
                 if self.coordinator_boost else np.zeros(len(moving), dtype=bool))
        new_pos = []
        for a, n, b in zip(moving, density.tolist(), boost.tolist()):
            if a.id in newly_decided:
                new_pos.append(a.position)
                continue
            v = adjusted_speed(a.accessibility, n, b, self.speed)
            new_pos.append(step_position(self.model, a.position, a.target, v))
        for a, p in zip(moving, new_pos):
            a.position = p
        for a in moving:
            ev = check_arrival(a)
            if ev is None:
                continue
            transition(a, TransitionEvent(EventKind.ARRIVED))
            if ev.exited:
                self.exited_count += 1
                self.exit_counts[ev.destination] = self.exit_counts.get(ev.destination, 0) + 1
                exits.append([a.id, ev.destination])
                self.tracker.withdraw(a.id)
            else:
                self.tracker.arrive(a.id)
        return exits

    def step(self) -> dict:
        if self.done:
            raise RuntimeError("simulation already finished")
        self.round += 1
        t0 = time.perf_counter()

        resumed = resume_groups(self.tracker, self.agents)

        events = check_influence(self.agents.values(), self.coordinators, self.rng["influence"])
        reset = reset_influenced_groups(events, self.agents, self.tracker)
        self.influence_event_count += len(events)

        deciding = [a for a in self.agents.values() if a.state is AgentState.DISCUSSING]
        messages: list = []
        decisions: list = []
        stats = {"issued": 0, "failed": 0, "retried": 0}
        decided: set[int] = set()
        latency = {"n": 0}
        if deciding:
            batch = decide_batch(self.policy, self._requests(deciding), self.backend_config)
            stats = batch.stats.counts()
            latency = batch.stats.latency_summary()
            decided = self._apply(batch.results, messages, decisions)

        exits = self._move(decided)
        self.tracker.check()

        log = {
            "schema_version": LOG_SCHEMA_VERSION,
            "round": self.round,
            "agents": [[a.id, round(a.position[0], 1), round(a.position[1], 1), _STATE_CODE[a.state],
                        a.destination] for a in self.agents.values() if a.state is not AgentState.EXITED],
            "exited_count": self.exited_count,
            "total": self.total,
            "exits": exits,
            "resumed": resumed,
            "reset": reset,
            "messages": messages,
            "decisions": decisions,
            "influence_events": [e.to_dict() for e in events],
            "request_stats": stats,
            "rng_checkpoint": self.rng.checkpoint(),
        }
        self.logs.append(log)
        self.timing.append({"round": self.round, "seconds": time.perf_counter() - t0, "latency": latency})
        return log

    def run(self, log_sink=None, save_every: int = 0, snapshot_dir: Optional[Path] = None) -> RunResult:
        while not self.done:
            log = self.step()
            if log_sink is not None:
                log_sink.write(_dumps(log) + "\n")
            if save_every and snapshot_dir is not None and self.round % save_every == 0:
                save_snapshot(self, Path(snapshot_dir) / f"round_{self.round:05d}.json")
        return RunResult(self.logs, self.termination, self.total, dict(sorted(self.exit_counts.items())),
                         self.influence_event_count, self.timing)

    # ---- snapshots --------------------------------------------------------

    def snapshot(self) -> dict:
        agents = []
        for a in self.agents.values():
            agents.append({
                "id": a.id, "name": a.persona.name, "background": a.persona.background,
                "major": a.persona.major, "relationship": a.persona.relationship,
                "category": a.category.value, "accessibility": a.accessibility, "group": list(a.group_id),
                "position": list(a.position), "target": list(a.target) if a.target else None,
                "destination": a.destination, "state": a.state.value,
                "pending_hint": list(a.pending_hint) if a.pending_hint else None,
                "decision_history": [list(d) for d in a.decision_history],
            })
        return {
            "schema_version": SNAPSHOT_SCHEMA_VERSION,
            "round": self.round,
            "seed": self.seed,
            "max_rounds": self.max_rounds,
            "announcement": self.announcement,
            "allowed": list(self.allowed),
            "closed": list(self.closed),
            "layout": layout_to_dict(self.model),
            "coordinators": coordinators_to_dict(self.coordinators),
            "speed": self.speed.__dict__,
            "coordinator_boost": self.coordinator_boost,
            "chat_window": self.chat_window,
            "max_nearby_agents": self.max_nearby_agents,
            "agents": agents,
            "groups": [{"members": list(g.members), "kind": g.kind.value} for g in self.groups],
            "chat": [{"group": list(k), "messages": v} for k, v in sorted(self.chat.items())],
            "tracker": self.tracker.to_dict(),
            "rng": self.rng.state(),
            "exited_count": self.exited_count,
            "exit_counts": self.exit_counts,
            "influence_event_count": self.influence_event_count,
            "policy_state": self.policy.state_dict() if hasattr(self.policy, "state_dict") else None,
        }

    @classmethod
    def from_snapshot(cls, data: dict, policy: DecisionPolicy,
                      backend_config: Optional[BackendConfig] = None) -> "Simulation":
        if data.get("schema_version") != SNAPSHOT_SCHEMA_VERSION:
            raise ValueError(f"unsupported snapshot schema_version {data.get('schema_version')!r}")
        model = layout_from_dict(data["layout"])
        pop = {"schema_version": 1, "agents": data["agents"], "groups": data["groups"]}
        agents, groups = population_from_dict(pop)
        for a, d in zip(agents, data["agents"]):
            a.position = tuple(d["position"])
            a.target = tuple(d["target"]) if d["target"] else None
            a.destination = d["destination"]
            a.state = AgentState(d["state"])
            a.pending_hint = tuple(d["pending_hint"]) if d["pending_hint"] else None
            a.decision_history = [tuple(x) for x in d["decision_history"]]
        sim = cls(model, agents, groups, coordinators_from_dict(data["coordinators"], model), policy,
                  seed=data["seed"], max_rounds=data["max_rounds"], announcement=data["announcement"],
                  allowed_destinations=data["allowed"], closed=data["closed"],
                  speed=SpeedParams(**data["speed"]), coordinator_boost=data["coordinator_boost"],
                  backend_config=backend_config, chat_window=data["chat_window"],
                  max_nearby_agents=data["max_nearby_agents"])
        sim.round = data["round"]
        sim.chat = {tuple(c["group"]): list(c["messages"]) for c in data["chat"]}
        sim.tracker = GroupTracker.from_dict(data["tracker"])
        sim.rng.restore(data["rng"])
        sim.exited_count = data["exited_count"]
        sim.exit_counts = dict(data["exit_counts"])
        sim.influence_event_count = data["influence_event_count"]
        if data.get("policy_state") is not None and hasattr(policy, "load_state_dict"):
            policy.load_state_dict(data["policy_state"])
        return sim


def save_snapshot(sim: Simulation, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dumps(sim.snapshot()) + "\n")


def load_snapshot(path: str | Path, policy: DecisionPolicy, backend_config=None) -> Simulation:
    return Simulation.from_snapshot(json.loads(Path(path).read_text()), policy, backend_config)


# --------------------------------------------------------------------------
# building and running
# --------------------------------------------------------------------------

def make_policy(config: RunConfig) -> DecisionPolicy:
    if config.backend is not None:
        from .backend import RemoteDecisionPolicy
        return RemoteDecisionPolicy(config.backend)
    return make_stub(config.policy)


def _scenario_of(config: RunConfig) -> Scenario:
    if config.scenario is None:
        return default_scenario()
    if isinstance(config.scenario, Scenario):
        return config.scenario
    return load_scenario(config.scenario)


def build_simulation(config: RunConfig, policy: Optional[DecisionPolicy] = None) -> Simulation:
    scenario = _scenario_of(config)
    seed = scenario.seed if config.seed is None else config.seed
    model = scenario.build_model()
    allowed = apply_threat_constraints(scenario, model)
    spec = load_population_spec(scenario.resolve(scenario.population))
    if scenario.population_seed is not None:
        spec = replace(spec, seed=int(scenario.population_seed))
    size = config.population_size or scenario.population_size
    agents, groups = generate_scaled_population(spec, size, model=model)
    coordinators = load_coordinator_layout(scenario.resolve(scenario.coordinator_layout), model)
    return Simulation(model, agents, groups, coordinators, policy or make_policy(config), seed=seed,
                      max_rounds=config.max_rounds, announcement=scenario.full_announcement(),
                      allowed_destinations=allowed, closed=closed_destinations(scenario, model),
                      speed=config.speed, coordinator_boost=config.coordinator_boost,
                      backend_config=config.backend, chat_window=config.chat_window,
                      max_nearby_agents=config.max_nearby_agents)


def run(config: RunConfig, policy: Optional[DecisionPolicy] = None) -> RunResult:
    sim = build_simulation(config, policy)
    if config.out_dir is None:
        return sim.run()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "population.json").write_text(
        json.dumps(population_to_dict(list(sim.agents.values()), sim.groups), sort_keys=True, indent=1) + "\n")
    with open(out / "rounds.jsonl", "w") as sink:
        result = sim.run(sink, config.save_every, out / "snapshots")
    write_replay(out / "replay.json", result.logs, sim.model)
    summary = {"termination": result.termination, "rounds": result.rounds, "total": result.total,
               "exited": result.exited, "exit_counts": result.exit_counts,
               "influence_events": result.influence_event_count, "metrics": result.metrics()}
    (out / "result.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    # wall-clock numbers live apart from the deterministic artifacts
    with open(out / "timing.jsonl", "w") as f:
        for t in result.timing:
            f.write(_dumps(t) + "\n")
    return result


def read_round_logs(path: str | Path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


# --------------------------------------------------------------------------
# metrics and replays
# --------------------------------------------------------------------------

def metric_evacuation_time(logs: Sequence[dict], fraction: float = 0.8,
                           total: Optional[int] = None) -> Optional[int]:
    """First round whose cumulative exited count reaches ``ceil(fraction * total)``."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if not logs:
        return None
    total = logs[0]["total"] if total is None else total
    need = math.ceil(fraction * total - 1e-9)
    for log in logs:
        if log["exited_count"] >= need:
            return log["round"]
    return None


def export_replay(logs: Sequence[dict], model: StadiumModel) -> bytes:
    if not logs:
        raise ValueError("cannot export an empty run")
    doc = {
        "format": REPLAY_FORMAT,
        "version": REPLAY_VERSION,
        "layout": layout_to_dict(model),
        "total": logs[0]["total"],
        "rounds": [{"round": log["round"], "exited_count": log["exited_count"],
                    "agents": [row[:4] for row in log["agents"]]} for log in logs],
    }
    return (_dumps(doc) + "\n").encode()


def write_replay(path: str | Path, logs: Sequence[dict], model: StadiumModel) -> None:
    Path(path).write_bytes(export_replay(logs, model))


@dataclass
class Replay:
    model: StadiumModel
    total: int
    rounds: list[dict]


def load_replay(source) -> Replay:
    """Read a replay from a path or from the exported bytes."""
    raw = source if isinstance(source, (bytes, bytearray)) else Path(source).read_bytes()
    doc = json.loads(raw)
    if doc.get("format") != REPLAY_FORMAT or doc.get("version") != REPLAY_VERSION:
        raise ValueError("not a supported replay file")
    return Replay(layout_from_dict(doc["layout"]), doc["total"], doc["rounds"])

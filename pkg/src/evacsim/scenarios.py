"""Scenario files, threat constraints and the experiment-matrix runner."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from ._toml import load_toml
from .agents import destination_catalog, is_exit
from .geometry import ExitPoint, GeometryError, Rect, StadiumModel, load_layout

logger = logging.getLogger(__name__)

SCENARIO_SCHEMA_VERSION = 1
MATRIX_SCHEMA_VERSION = 1
EXTRA_EXIT_DEFAULT = (20.0, 600.0)


class ScenarioError(ValueError):
    """Validation failure; ``errors`` lists every problem found."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class EmergencyType(str, Enum):
    SEVERE_WEATHER = "SevereWeather"
    BOMB_THREAT = "BombThreat"


@dataclass
class Scenario:
    name: str
    emergency_type: EmergencyType
    announcement: str
    announcement_includes_location: bool = False
    threat_location: Optional[Rect] = None
    threat_description: str = ""
    coordinator_layout: str = "default"
    layout: str = "default"
    extra_exits: tuple[ExitPoint, ...] = ()
    population: str = "default"
    population_size: Optional[int] = None
    population_seed: Optional[int] = None
    seed: int = 0
    base_dir: Optional[Path] = field(default=None, compare=False)

    def resolve(self, ref: str) -> str:
        """Keyword references pass through; relative paths resolve next to the scenario file."""
        if ref in ("default", "none") or self.base_dir is None or Path(ref).is_absolute():
            return ref
        return str(self.base_dir / ref)

    def build_model(self) -> StadiumModel:
        model = load_layout(self.resolve(self.layout))
        if self.extra_exits:
            model = model.with_exits(list(model.exits) + list(self.extra_exits))
        return model

    @property
    def exit_set(self) -> list[str]:
        return [e.id for e in self.build_model().exits]

    def full_announcement(self) -> str:
        text = self.announcement.strip()
        if self.announcement_includes_location and self.threat_location is not None:
            where = self.threat_description or _describe_rect(self.threat_location)
            text += f" The reported threat is {where}. Keep away from that area."
        return text

    def to_dict(self) -> dict:
        d = {"schema_version": SCENARIO_SCHEMA_VERSION, "name": self.name,
             "emergency_type": self.emergency_type.value, "announcement": self.announcement,
             "announcement_includes_location": self.announcement_includes_location,
             "coordinator_layout": self.coordinator_layout, "layout": self.layout,
             "population": self.population, "seed": self.seed,
             "extra_exits": [{"id": e.id, "position": list(e.position)} for e in self.extra_exits]}
        if self.population_size is not None:
            d["population_size"] = self.population_size
        if self.population_seed is not None:
            d["population_seed"] = self.population_seed
        if self.threat_location is not None:
            d["threat"] = {"rect": self.threat_location.as_list(), "description": self.threat_description}
        return d


def _describe_rect(r: Rect) -> str:
    return f"in the area spanning x {r.x0:.0f} to {r.x1:.0f} and y {r.y0:.0f} to {r.y1:.0f}"


def scenario_from_dict(data: dict, base_dir: Optional[Path] = None) -> Scenario:
    errors = []
    version = data.get("schema_version")
    if version != SCENARIO_SCHEMA_VERSION:
        errors.append(f"schema_version: unsupported value {version!r}")
    try:
        etype = EmergencyType(data.get("emergency_type"))
    except ValueError:
        errors.append(f"emergency_type: must be one of {[e.value for e in EmergencyType]}")
        etype = None
    announcement = data.get("announcement")
    if not isinstance(announcement, str) or not announcement.strip():
        errors.append("announcement: required nonempty text")
    threat = data.get("threat")
    rect = None
    desc = ""
    if threat is not None:
        try:
            rect = Rect(*(float(v) for v in threat["rect"]))
        except (KeyError, TypeError, ValueError, GeometryError):
            errors.append("threat.rect: must be [x0, y0, x1, y1] with x1 > x0 and y1 > y0")
        desc = str(threat.get("description", ""))
    if etype is EmergencyType.BOMB_THREAT and threat is None:
        errors.append("threat_location: required for BombThreat scenarios ([threat] rect)")
    if etype is EmergencyType.SEVERE_WEATHER and threat is not None:
        errors.append("threat_location: only BombThreat scenarios may declare a threat")
    extra = []
    for i, e in enumerate(data.get("extra_exits", [])):
        try:
            pos = e.get("position", list(EXTRA_EXIT_DEFAULT))
            extra.append(ExitPoint(str(e["id"]), (float(pos[0]), float(pos[1]))))
        except (KeyError, TypeError, ValueError, IndexError):
            errors.append(f"extra_exits[{i}]: needs id and position [x, y]")
    size = data.get("population_size")
    if size is not None and (not isinstance(size, int) or size < 1):
        errors.append("population_size: must be a positive integer")
    if errors:
        raise ScenarioError(errors)
    return Scenario(
        name=str(data.get("name", "scenario")),
        emergency_type=etype,
        announcement=announcement,
        announcement_includes_location=bool(data.get("announcement_includes_location", False)),
        threat_location=rect,
        threat_description=desc,
        coordinator_layout=str(data.get("coordinator_layout", "default")),
        layout=str(data.get("layout", "default")),
        extra_exits=tuple(extra),
        population=str(data.get("population", "default")),
        population_size=size,
        population_seed=data.get("population_seed"),
        seed=int(data.get("seed", 0)),
        base_dir=base_dir,
    )


def validate_scenario(s: Scenario) -> StadiumModel:
    """Check that every reference resolves and the threat leaves an exit open."""
    errors = []
    for fld in ("layout", "coordinator_layout", "population"):
        ref = s.resolve(getattr(s, fld))
        if ref not in ("default", "none") and not Path(ref).is_file():
            errors.append(f"{fld}: file not found: {ref}")
    if errors:
        raise ScenarioError(errors)
    try:
        model = s.build_model()
    except GeometryError as exc:
        raise ScenarioError([f"exit_set: {exc}"]) from None
    apply_threat_constraints(s, model)
    from .coordination import CoordinationError, load_coordinator_layout
    from .population import PopulationError, load_population_spec
    try:
        load_coordinator_layout(s.resolve(s.coordinator_layout), model)
    except (CoordinationError, KeyError, ValueError) as exc:
        errors.append(f"coordinator_layout: {exc}")
    try:
        load_population_spec(s.resolve(s.population))
    except (PopulationError, KeyError, ValueError) as exc:
        errors.append(f"population: {exc}")
    if errors:
        raise ScenarioError(errors)
    return model


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError([f"scenario: file not found: {path}"])
    try:
        data = load_toml(path)
    except Exception as exc:
        raise ScenarioError([f"scenario: cannot parse {path}: {exc}"]) from None
    s = scenario_from_dict(data, path.parent)
    validate_scenario(s)
    return s


def default_scenario() -> Scenario:
    return Scenario(name="severe-weather", emergency_type=EmergencyType.SEVERE_WEATHER,
                    announcement=("A severe thunderstorm with lightning is approaching the stadium. "
                                  "Please leave the stadium calmly through the nearest exit."))


def apply_threat_constraints(scenario: Scenario, model: StadiumModel,
                             catalog: Optional[Sequence[str]] = None) -> tuple[str, ...]:
    """Destinations still offered to agents; identity unless a threat is declared."""
    catalog = list(catalog if catalog is not None else destination_catalog(model))
    if scenario.emergency_type is not EmergencyType.BOMB_THREAT or scenario.threat_location is None:
        return tuple(catalog)
    threat = scenario.threat_location
    kept = []
    for d in catalog:
        if is_exit(d):
            if threat.contains(model.exit(d).position):
                continue
        else:
            try:
                if model.region(d).rect.overlaps(threat):
                    continue
            except GeometryError:
                pass
        kept.append(d)
    if not any(is_exit(d) for d in kept):
        raise ScenarioError(["threat_location: covers every exit, leaving no way out"])
    return tuple(kept)


def closed_destinations(scenario: Scenario, model: StadiumModel) -> tuple[str, ...]:
    allowed = set(apply_threat_constraints(scenario, model))
    return tuple(d for d in destination_catalog(model) if d not in allowed)


# --------------------------------------------------------------------------
# experiment matrix
# --------------------------------------------------------------------------

@dataclass
class ExperimentMatrix:
    variants: list[Scenario]
    repetitions: int = 1
    fractions: tuple[float, ...] = (0.8,)

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ScenarioError(["repetitions: must be at least 1"])
        if not self.variants:
            raise ScenarioError(["variants: need at least one scenario"])
        names = [v.name for v in self.variants]
        if len(set(names)) != len(names):
            raise ScenarioError(["variants: names must be unique"])


_OVERRIDABLE = ("name", "seed", "population_size", "population_seed", "coordinator_layout", "announcement",
                "announcement_includes_location")


def load_matrix(path: str | Path) -> ExperimentMatrix:
    path = Path(path)
    data = load_toml(path)
    if data.get("schema_version") != MATRIX_SCHEMA_VERSION:
        raise ScenarioError([f"schema_version: unsupported value {data.get('schema_version')!r}"])
    variants = []
    for i, v in enumerate(data.get("variants", [])):
        if "scenario" not in v:
            raise ScenarioError([f"variants[{i}].scenario: required"])
        s = load_scenario(path.parent / v["scenario"])
        over = {k: v[k] for k in _OVERRIDABLE if k in v}
        if "coordinator_layout" in over and over["coordinator_layout"] not in ("default", "none"):
            over["coordinator_layout"] = str((path.parent / over["coordinator_layout"]).resolve())
        s = replace(s, **over)
        validate_scenario(s)
        variants.append(s)
    return ExperimentMatrix(variants, int(data.get("repetitions", 1)),
                            tuple(float(f) for f in data.get("fractions", [0.8])))


@dataclass
class MatrixRow:
    variant: str
    repetition: int
    seed: int
    status: str
    rounds: Optional[int] = None
    exited: Optional[int] = None
    total: Optional[int] = None
    metrics: dict = field(default_factory=dict)
    exit_utilization: dict = field(default_factory=dict)
    influence_events: Optional[int] = None
    error: Optional[str] = None


@dataclass
class MatrixReport:
    rows: list[MatrixRow]
    fractions: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"schema_version": MATRIX_SCHEMA_VERSION, "fractions": list(self.fractions),
                "rows": [r.__dict__ for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        exits = sorted({e for r in self.rows for e in r.exit_utilization})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", "repetition", "seed", "status", "rounds", "exited", "total",
                    *[f"t{f:g}" for f in self.fractions], *[f"exit_{e}" for e in exits],
                    "influence_events", "error"])
        for r in self.rows:
            w.writerow([r.variant, r.repetition, r.seed, r.status, r.rounds, r.exited, r.total,
                        *[r.metrics.get(f"{f:g}") for f in self.fractions],
                        *[r.exit_utilization.get(e, 0) for e in exits], r.influence_events, r.error or ""])
        return buf.getvalue()


def _run_variant(args) -> MatrixRow:
    from .engine import RunConfig, metric_evacuation_time, run
    scenario, rep, base_config, fractions = args
    seed = scenario.seed + rep
    try:
        res = run(replace(base_config, scenario=scenario, seed=seed, out_dir=None))
    except Exception as exc:
        logger.exception("variant %s repetition %d failed", scenario.name, rep)
        return MatrixRow(scenario.name, rep, seed, "failed", error=repr(exc))
    return MatrixRow(
        variant=scenario.name, repetition=rep, seed=seed, status="ok",
        rounds=res.rounds, exited=res.exited, total=res.total,
        metrics={f"{f:g}": metric_evacuation_time(res.logs, f) for f in fractions},
        exit_utilization=dict(sorted(res.exit_counts.items())),
        influence_events=res.influence_event_count)


def _sort_key(row: MatrixRow, fractions):
    m = row.metrics.get(f"{fractions[0]:g}") if fractions else None
    return (m is None, m if m is not None else 0, row.variant, row.repetition)


def run_matrix(matrix: ExperimentMatrix, base_config, jobs: int = 1) -> MatrixReport:
    """Every variant times every repetition; failures are recorded, never raised."""
    tasks = [(v, rep, base_config, matrix.fractions) for v in matrix.variants for rep in range(matrix.repetitions)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_variant, tasks))
    else:
        rows = [_run_variant(t) for t in tasks]
    rows.sort(key=lambda r: _sort_key(r, matrix.fractions))
    return MatrixReport(rows, matrix.fractions)


__all__ = [
    "EmergencyType", "ExperimentMatrix", "MatrixReport", "MatrixRow", "Scenario", "ScenarioError",
    "apply_threat_constraints", "closed_destinations", "default_scenario",
    "load_matrix", "load_scenario", "run_matrix", "scenario_from_dict", "validate_scenario",
]

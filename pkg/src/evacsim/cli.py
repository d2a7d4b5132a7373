"""Command-line entry point: ``evacsim <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 validation failure, 64 usage.
Errors are reported on stderr as a single JSON object.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _report(kind: str, messages: Sequence[str]) -> None:
    sys.stderr.write(json.dumps({"error": kind, "messages": list(messages)}, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    entries = [{"path": p.relative_to(out).as_posix(), "sha256": _sha256(p), "bytes": p.stat().st_size}
               for p in files]
    path = out / "manifest.json"
    path.write_text(json.dumps({"artifacts": entries}, sort_keys=True, indent=1) + "\n")
    return path


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


# --------------------------------------------------------------------------
# shared option handling
# --------------------------------------------------------------------------

def _add_policy_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--stub", default=None,
                   help="offline decision policy: nearest-exit, obedient, delay-k[:K], scripted:PATH")
    g.add_argument("--backend", type=Path, default=None,
                   help="remote model config (TOML); the API key is read from the environment")


def _backend_config(args):
    if args.backend is None:
        return None
    from .backend import load_backend_config
    if not args.backend.is_file():
        raise ValidationFailure([f"backend: file not found: {args.backend}"])
    try:
        return load_backend_config(args.backend)
    except (ValueError, TypeError) as exc:
        raise ValidationFailure([f"backend: {exc}"]) from None


def _run_config(args, scenario):
    from .decisions import make_stub
    from .engine import RunConfig
    stub = args.stub or "nearest-exit"
    if args.backend is None:
        try:
            make_stub(stub)
        except (ValueError, OSError, KeyError) as exc:
            raise ValidationFailure([f"stub: {exc}"]) from None
    return RunConfig(scenario=scenario, seed=args.seed, max_rounds=args.max_rounds,
                     save_every=getattr(args, "save_every", 0), policy=stub, backend=_backend_config(args),
                     population_size=args.population_size, coordinator_boost=not args.no_boost)


def _load_scenario(path: Optional[Path]):
    from .scenarios import ScenarioError, default_scenario, load_scenario
    if path is None:
        return default_scenario()
    try:
        return load_scenario(path)
    except ScenarioError as exc:
        raise ValidationFailure(exc.errors) from None


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_gen_population(args) -> int:
    from .population import (
        PopulationError,
        StubPersonaBackend,
        dump_population,
        generate_scaled_population,
        load_population_spec,
    )
    try:
        spec = load_population_spec(args.spec)
    except (PopulationError, KeyError, ValueError, OSError) as exc:
        raise ValidationFailure([f"population: {exc}"]) from None
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    backend = StubPersonaBackend(spec.seed)
    cfg = _backend_config(args)
    if cfg is not None:
        from .backend import RemotePersonaBackend
        backend = RemotePersonaBackend(cfg)
    agents, groups = generate_scaled_population(spec, args.size, backend)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    dump_population(out / "population.json", agents, groups, spec)
    write_manifest(out)
    print(json.dumps({"agents": len(agents), "groups": len(groups), "out": str(out)}, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    from .engine import run
    scenario = _load_scenario(args.scenario)
    config = _run_config(args, scenario)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    config = replace(config, out_dir=out)
    _write_json(out / "run.json", {"scenario": scenario.to_dict(), "seed": config.seed,
                                   "max_rounds": config.max_rounds,
                                   "policy": "remote" if config.backend else config.policy,
                                   "population_size": config.population_size,
                                   "coordinator_boost": config.coordinator_boost})
    result = run(config)
    write_manifest(out)
    print(json.dumps({"termination": result.termination, "rounds": result.rounds, "exited": result.exited,
                      "total": result.total, "metrics": result.metrics()}, sort_keys=True))
    return EXIT_OK


def cmd_matrix(args) -> int:
    from .scenarios import ScenarioError, load_matrix, run_matrix
    try:
        matrix = load_matrix(args.matrix)
    except ScenarioError as exc:
        raise ValidationFailure(exc.errors) from None
    config = _run_config(args, None)
    report = run_matrix(matrix, config, jobs=args.jobs)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    write_manifest(out)
    failed = sum(r.status != "ok" for r in report.rows)
    print(json.dumps({"rows": len(report.rows), "failed": failed, "out": str(out)}, sort_keys=True))
    return EXIT_OK


def _rounds_path(p: Path) -> Path:
    return p / "rounds.jsonl" if p.is_dir() else p


def cmd_metrics(args) -> int:
    from .engine import metric_evacuation_time, read_round_logs
    path = _rounds_path(args.run)
    if not path.is_file():
        raise ValidationFailure([f"run: no round log at {path}"])
    for f in args.fraction:
        if not 0.0 < f <= 1.0:
            raise ValidationFailure([f"fraction: {f} must lie in (0, 1]"])
    logs = read_round_logs(path)
    out = {"rounds": len(logs), "total": logs[0]["total"] if logs else 0,
           "exited": logs[-1]["exited_count"] if logs else 0,
           "evacuation_time": {f"{f:g}": metric_evacuation_time(logs, f) for f in args.fraction}}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_replay_export(args) -> int:
    from .engine import read_round_logs, write_replay
    from .geometry import layout_from_dict, load_layout
    from .scenarios import scenario_from_dict
    path = _rounds_path(args.run)
    if not path.is_file():
        raise ValidationFailure([f"run: no round log at {path}"])
    logs = read_round_logs(path)
    if not logs:
        raise ValidationFailure(["run: round log is empty"])
    info = path.parent / "run.json"
    if args.layout is not None:
        model = load_layout(args.layout)
    elif info.is_file():
        model = scenario_from_dict(json.loads(info.read_text())["scenario"]).build_model()
    else:
        model = load_layout()
    out = args.out or path.parent / "replay.json"
    write_replay(out, logs, model)
    print(json.dumps({"replay": str(out), "rounds": len(logs)}, sort_keys=True))
    return EXIT_OK


def cmd_commsim_misinterpret(args) -> int:
    from .commsim import StubCommBackend, run_misinterpretation
    messages = list(args.message or [])
    if args.messages is not None:
        messages += [ln.strip() for ln in args.messages.read_text().splitlines() if ln.strip()]
    if not messages:
        raise ValidationFailure(["messages: give --message or --messages FILE"])
    if not 0 <= args.threshold <= 100:
        raise ValidationFailure(["threshold: must lie in 0..100"])
    backend = StubCommBackend(args.seed)
    cfg = _backend_config(args)
    if cfg is not None:
        from .backend import RemoteCommBackend
        backend = RemoteCommBackend(cfg)
    records = run_misinterpretation(args.agents, messages, args.threshold, backend)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "misinterpretation.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r.__dict__, sort_keys=True) + "\n")
    write_manifest(out)
    extreme = sum(r.extreme_reaction is not None for r in records)
    print(json.dumps({"records": len(records), "extreme": extreme, "out": str(out)}, sort_keys=True))
    return EXIT_OK


def cmd_commsim_propagate(args) -> int:
    from .commsim import StubCommBackend, load_script, run_propagation
    try:
        script = load_script(args.script)
    except (ValueError, KeyError, OSError) as exc:
        raise ValidationFailure([f"script: {exc}"]) from None
    backend = StubCommBackend(args.seed, action_rule=args.actions)
    cfg = _backend_config(args)
    if cfg is not None:
        from .backend import RemoteCommBackend
        backend = RemoteCommBackend(cfg)
    res = run_propagation(script, args.agents, args.moderated, backend, args.seed)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    events = [{"section": e.section, "round": e.round, "source": e.source, "content": e.content,
               "recipients": sorted(e.recipients), "moderated": e.moderated} for e in res.events]
    _write_json(out / "propagation.json", {"outcomes": res.outcomes, "events": events, "log": res.log})
    write_manifest(out)
    print(json.dumps({"sections": len(res.outcomes), "diffusion_events": len(events)}, sort_keys=True))
    return EXIT_OK


def _detect_kind(data: dict) -> str:
    if "emergency_type" in data:
        return "scenario"
    if "variants" in data:
        return "matrix"
    if "per_major_counts" in data:
        return "population"
    if "coordinators" in data:
        return "coordinators"
    if "features" in data or "exits" in data:
        return "layout"
    if "sections" in data:
        return "script"
    return "unknown"


def _validate_one(path: Path, kind: str) -> list[str]:
    from ._toml import load_toml
    from .commsim import script_from_dict
    from .coordination import coordinators_from_dict
    from .geometry import layout_from_dict, load_layout
    from .population import spec_from_dict
    from .scenarios import load_matrix, load_scenario
    if not path.is_file():
        return [f"{path}: file not found"]
    try:
        data = load_toml(path)
    except Exception as exc:
        return [f"{path}: cannot parse: {exc}"]
    kind = _detect_kind(data) if kind == "auto" else kind
    try:
        if kind == "scenario":
            load_scenario(path)
        elif kind == "matrix":
            load_matrix(path)
        elif kind == "population":
            spec_from_dict(data)
        elif kind == "coordinators":
            coordinators_from_dict(data, load_layout())
        elif kind == "layout":
            layout_from_dict(data)
        elif kind == "script":
            script_from_dict(data)
        else:
            return [f"{path}: cannot tell what kind of file this is; pass --kind"]
    except Exception as exc:
        errs = getattr(exc, "errors", None) or [str(exc)]
        return [f"{path}: {e}" for e in errs]
    return []


def cmd_validate(args) -> int:
    errors = []
    for p in args.files:
        errors += _validate_one(p, args.kind)
    if errors:
        raise ValidationFailure(errors)
    print(json.dumps({"valid": [str(p) for p in args.files]}, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evacsim", description="Stadium evacuation simulation and communication experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-population", help="generate a population file")
    g.add_argument("--spec", default="default", help="population spec TOML (default: built-in)")
    g.add_argument("--size", type=int, default=None, help="target headcount, scaled in proportion")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--backend", type=Path, default=None, help="remote model config for persona text")
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_gen_population)

    def engine_flags(q):
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--max-rounds", type=int, default=1000)
        q.add_argument("--population-size", type=int, default=None)
        q.add_argument("--no-boost", action="store_true", help="disable the coordinator speed boost")
        _add_policy_flags(q)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--scenario", type=Path, default=None)
    r.add_argument("--save-every", type=int, default=0)
    r.add_argument("--out", type=Path, required=True)
    engine_flags(r)
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("matrix", help="run an experiment matrix")
    m.add_argument("--matrix", type=Path, required=True)
    m.add_argument("--jobs", type=int, default=1)
    m.add_argument("--out", type=Path, required=True)
    engine_flags(m)
    m.set_defaults(func=cmd_matrix)

    mt = sub.add_parser("metrics", help="evacuation-time metrics of a finished run")
    mt.add_argument("--run", type=Path, required=True, help="run directory or rounds.jsonl")
    mt.add_argument("--fraction", type=float, action="append", default=None)
    mt.set_defaults(func=cmd_metrics)

    rx = sub.add_parser("replay-export", help="write a replay file from a round log")
    rx.add_argument("--run", type=Path, required=True)
    rx.add_argument("--layout", type=Path, default=None)
    rx.add_argument("--out", type=Path, default=None)
    rx.set_defaults(func=cmd_replay_export)

    cm = sub.add_parser("commsim-misinterpret", help="misinterpretation grid")
    cm.add_argument("--agents", type=int, default=5)
    cm.add_argument("--message", action="append")
    cm.add_argument("--messages", type=Path, default=None, help="text file, one message per line")
    cm.add_argument("--threshold", type=int, default=60)
    cm.add_argument("--seed", type=int, default=0)
    cm.add_argument("--backend", type=Path, default=None)
    cm.add_argument("--out", type=Path, required=True)
    cm.set_defaults(func=cmd_commsim_misinterpret)

    cp = sub.add_parser("commsim-propagate", help="scripted propagation run")
    cp.add_argument("--script", type=Path, required=True)
    cp.add_argument("--agents", type=int, default=10)
    cp.add_argument("--moderated", action="store_true")
    cp.add_argument("--actions", default="mixed", choices=["mixed", "idle", "spread", "evacuate"])
    cp.add_argument("--seed", type=int, default=0)
    cp.add_argument("--backend", type=Path, default=None)
    cp.add_argument("--out", type=Path, required=True)
    cp.set_defaults(func=cmd_commsim_propagate)

    v = sub.add_parser("validate", help="check input files without running anything")
    v.add_argument("files", type=Path, nargs="+")
    v.add_argument("--kind", default="auto",
                   choices=["auto", "scenario", "matrix", "population", "coordinators", "layout", "script"])
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _report("usage", [str(exc)])
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "fraction", "unset") is None:
        args.fraction = [0.8]
    try:
        return args.func(args)
    except ValidationFailure as exc:
        _report("validation", exc.errors)
        return EXIT_VALIDATION
    except Exception as exc:
        logging.getLogger("evacsim").debug("run failed", exc_info=True)
        _report("runtime", [f"{type(exc).__name__}: {exc}"])
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

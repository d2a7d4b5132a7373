import json
from pathlib import Path

import pytest

import evacsim
from evacsim.cli import EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main

SCEN = Path(evacsim.__file__).parent / "data" / "scenarios"


def small_scenario(tmp_path, size=40):
    text = (SCEN / "severe_weather.toml").read_text() + f"population_size = {size}\n"
    p = tmp_path / "severe.toml"
    p.write_text(text)
    return p


def run_cli(args, capsys):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_run_writes_artifacts_and_is_repeatable(tmp_path, capsys):
    scen = small_scenario(tmp_path)
    code, out, _ = run_cli(["run", "--scenario", scen, "--stub", "nearest-exit", "--seed", 1, "--out", tmp_path / "a"],
                           capsys)
    assert code == EXIT_OK and json.loads(out)["termination"] == "all exited"
    for name in ("rounds.jsonl", "replay.json", "manifest.json", "run.json", "population.json"):
        assert (tmp_path / "a" / name).is_file()
    first = (tmp_path / "a" / "rounds.jsonl").read_bytes()
    run_cli(["run", "--scenario", scen, "--stub", "nearest-exit", "--seed", 1, "--out", tmp_path / "a"], capsys)
    assert (tmp_path / "a" / "rounds.jsonl").read_bytes() == first
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert "rounds.jsonl" in json.dumps(manifest)

    code, out, _ = run_cli(["metrics", "--run", tmp_path / "a", "--fraction", 0.8], capsys)
    assert code == EXIT_OK and json.loads(out)["evacuation_time"]["0.8"] is not None

    code, out, _ = run_cli(["replay-export", "--run", tmp_path / "a", "--out", tmp_path / "r.json"], capsys)
    assert code == EXIT_OK
    assert (tmp_path / "r.json").read_bytes() == (tmp_path / "a" / "replay.json").read_bytes()


def test_validate_reports_field(capsys):
    code, _, err = run_cli(["validate", SCEN / "bomb_threat_missing_location.toml"], capsys)
    assert code == EXIT_VALIDATION
    report = json.loads(err)
    assert report["error"] == "validation" and "threat_location" in " ".join(report["messages"])


def test_validate_good_files(capsys):
    files = [SCEN / n for n in ("severe_weather.toml", "bomb_threat_exit2.toml", "extra_exit.toml",
                                "eight_coordinators.toml", "policy_matrix.toml", "rumor_script.toml")]
    code, out, _ = run_cli(["validate", *files], capsys)
    assert code == EXIT_OK and len(json.loads(out)["valid"]) == 6


def test_usage_errors(capsys):
    assert run_cli(["run", "--bogus"], capsys)[0] == EXIT_USAGE
    assert run_cli(["frobnicate"], capsys)[0] == EXIT_USAGE
    code, _, err = run_cli(["run", "--out", "x", "--stub", "nearest-exit", "--backend", "b.toml"], capsys)
    assert code == EXIT_USAGE and json.loads(err)["error"] == "usage"


def test_metrics_bad_fraction(tmp_path, capsys):
    (tmp_path / "rounds.jsonl").write_text('{"round": 1, "exited_count": 1, "total": 1}\n')
    assert run_cli(["metrics", "--run", tmp_path, "--fraction", 1.5], capsys)[0] == EXIT_VALIDATION
    assert run_cli(["metrics", "--run", tmp_path / "nope"], capsys)[0] == EXIT_VALIDATION


def test_gen_population(tmp_path, capsys):
    code, out, _ = run_cli(["gen-population", "--size", 300, "--seed", 7, "--out", tmp_path / "p"], capsys)
    assert code == EXIT_OK
    first = sorted(p.name for p in (tmp_path / "p").iterdir())
    blob = b"".join((tmp_path / "p" / n).read_bytes() for n in first)
    run_cli(["gen-population", "--size", 300, "--seed", 7, "--out", tmp_path / "p"], capsys)
    assert b"".join((tmp_path / "p" / n).read_bytes() for n in first) == blob


def test_commsim_commands(tmp_path, capsys):
    code, out, _ = run_cli(["commsim-misinterpret", "--agents", 3, "--message", "Leave now", "--message", "Stay calm",
                            "--out", tmp_path / "m"], capsys)
    assert code == EXIT_OK and json.loads(out)["records"] == 6
    code, out, _ = run_cli(["commsim-propagate", "--script", SCEN / "rumor_script.toml", "--agents", 10,
                            "--moderated", "--actions", "spread", "--out", tmp_path / "q"], capsys)
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "q" / "propagation.json").read_text())
    assert doc["events"] and all(len(e["recipients"]) == 7 for e in doc["events"])
    assert run_cli(["commsim-misinterpret", "--out", tmp_path / "m2"], capsys)[0] == EXIT_VALIDATION


def test_missing_scenario_is_validation_error(tmp_path, capsys):
    code, _, err = run_cli(["run", "--scenario", tmp_path / "nope.toml", "--out", tmp_path / "o"], capsys)
    assert code == EXIT_VALIDATION
    assert not (tmp_path / "o").exists()

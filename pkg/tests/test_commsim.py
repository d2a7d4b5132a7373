import numpy as np
import pytest
from hypothesis import given, strategies as st

import evacsim
from evacsim.commsim import (
    DIFFUSION_FRACTION, EXTREME_THRESHOLD, WARNING_PREFIX, Action, CommAgent, CommState, DiffusionEvent,
    Injection, MisinterpretationRecord, ScenarioScript, Section, StubCommBackend, load_script, moderate,
    run_misinterpretation, run_propagation, sample_recipients, token_overlap_score,
)

SCRIPT = load_script(__import__("pathlib").Path(evacsim.__file__).parent / "data" / "scenarios" / "rumor_script.toml")


class Echo(StubCommBackend):
    def interpret(self, persona, message):
        return message, "ok"


def test_constants():
    assert WARNING_PREFIX == "WARNING: This piece of content might contain misinformation"
    assert DIFFUSION_FRACTION == 0.7 and EXTREME_THRESHOLD == 60


def test_echo_scores_zero():
    recs = run_misinterpretation(2, ["Leave by the north exit."], backend=Echo())
    assert all(r.score == 0 and r.extreme_reaction is None for r in recs)
    assert token_overlap_score("a b c", "c b a") == 0


def test_forced_score_always_extreme():
    recs = run_misinterpretation(3, ["x", "y"], 60, StubCommBackend(forced_score=100))
    assert len(recs) == 6 and all(r.extreme_reaction for r in recs)


@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 100), st.integers(0, 50))
def test_grid_complete_and_consistent(n, m, threshold, seed):
    msgs = [f"message {i}: stay calm and walk to exit {i}" for i in range(m)]
    recs = run_misinterpretation(n, msgs, threshold, StubCommBackend(seed))
    assert sorted((r.agent, r.message) for r in recs) == [(a, b) for a in range(n) for b in range(m)]
    for r in recs:
        assert 0 <= r.score <= 100
        assert (r.extreme_reaction is not None) == (r.score > threshold)


class Broken(StubCommBackend):
    def assess(self, message, interpretation, reaction):
        if "bad" in message:
            raise RuntimeError("scorer down")
        return 10


def test_failed_pairs_still_fill_grid():
    recs = run_misinterpretation(2, ["good", "bad"], backend=Broken())
    assert len(recs) == 4 and sum(r.error is not None for r in recs) == 2


def test_record_invariants():
    with pytest.raises(ValueError):
        MisinterpretationRecord(0, 0, "i", "r", 101, None)
    with pytest.raises(ValueError):
        MisinterpretationRecord(0, 0, "i", "r", 70, None, 60)
    with pytest.raises(ValueError):
        DiffusionEvent(0, 0, 0, "plain", frozenset(), True)


@pytest.mark.parametrize("n", [3, 10, 100])
def test_recipient_count(n):
    rng = np.random.default_rng(0)
    for src in range(min(n, 5)):
        r = sample_recipients(n, src, rng)
        assert len(r) == int(0.7 * n + 1e-9) and src not in r


def test_moderate_prefix():
    assert moderate("hello").startswith(WARNING_PREFIX)
    assert moderate("hello").encode()[:len(WARNING_PREFIX)] == WARNING_PREFIX.encode()


def test_spread_event_sizes_and_moderation():
    res = run_propagation(SCRIPT, 10, moderated=True, backend=StubCommBackend(1, action_rule="spread"), seed=1)
    assert res.events
    for ev in res.events:
        assert len(ev.recipients) == 7
        assert ev.content.startswith(WARNING_PREFIX) and ev.moderated


def test_idle_policy_has_no_events():
    res = run_propagation(SCRIPT, 10, backend=StubCommBackend(action_rule="idle"))
    assert res.events == []
    assert [o["evacuated"] for o in res.outcomes] == [[], []]


def test_inactive_permanent_and_section_reset():
    agents = [CommAgent(i, p) for i, p in enumerate(StubCommBackend(3).generate_agents(12))]
    res = run_propagation(SCRIPT, agents, backend=StubCommBackend(3), seed=3)
    by_section = {}
    for entry in res.log:
        by_section.setdefault(entry["section"], []).append(entry)
    for sec, entries in by_section.items():
        inactive = set()
        for e in entries:
            assert not inactive & set(int(k) for k in e["actions"])
            assert inactive <= set(e["inactive"])
            inactive = set(e["inactive"])
    assert all(a.state is CommState.ACTIVE for a in agents)
    assert all(len(a.rewards) == 2 for a in agents)
    assert all(not a.decision_history and not a.action_history for a in agents)


def test_inactive_agents_never_source():
    res = run_propagation(SCRIPT, 20, backend=StubCommBackend(5), seed=5)
    inactive_at = {}
    for e in res.log:
        for aid in e["inactive"]:
            inactive_at.setdefault((e["section"], aid), e["round"])
    for ev in res.events:
        r = inactive_at.get((ev.section, ev.source))
        assert r is None or ev.round <= r


def test_propagation_deterministic():
    a = run_propagation(SCRIPT, 15, backend=StubCommBackend(2), seed=2)
    b = run_propagation(SCRIPT, 15, backend=StubCommBackend(2), seed=2)
    assert a.log == b.log and a.events == b.events


def test_script_needs_sections():
    with pytest.raises(ValueError):
        ScenarioScript(())

import numpy as np
import pytest
from hypothesis import given, strategies as st

from evacsim.agents import Agent, AgentCategory, AgentState, Persona
from evacsim.coordination import (
    CoordinationError, Coordinator, GroupTracker, InfluenceEvent, check_influence, coordinators_from_dict,
    coordinators_to_dict, default_coordinator_layout, load_coordinator_layout, near_any_coordinator,
    reset_influenced_groups, resume_groups,
)
from evacsim.geometry import ExitPoint, load_layout

MODEL = load_layout()
DATA = __import__("evacsim").__path__[0] + "/data"


def member(aid, group, state=AgentState.MOVING, pos=(1000.0, 300.0), dest="Exit2"):
    target = MODEL.exit(dest).position if dest and dest.startswith("Exit") else (1000.0, 100.0)
    return Agent(aid, Persona(f"P{aid}", "bg", "Art"), AgentCategory.WITH_FRIENDS if len(group) > 1
                 else AgentCategory.ALONE, False, tuple(group), pos,
                 target if state is AgentState.MOVING else None, dest if state is AgentState.MOVING else None, state)


def test_default_layout():
    coords = default_coordinator_layout(MODEL)
    assert len(coords) == 50
    assert len({c.id for c in coords}) == 50
    for c in coords:
        assert c.suggested_exit == ("Exit1" if c.position[1] < 600 else "Exit3")
        assert c.influence_radius == 50 and c.reaction_probability == 0.5
        assert not MODEL.stage.rect.contains_strict(c.position)


def test_default_layout_needs_exits():
    with pytest.raises(CoordinationError):
        default_coordinator_layout(MODEL.with_exits([ExitPoint("Exit2", (2380, 20))]))


def test_eight_coordinator_file_loads_verbatim():
    coords = load_coordinator_layout(f"{DATA}/scenarios/eight_coordinators.toml", MODEL)
    assert len(coords) == 8
    assert coordinators_from_dict(coordinators_to_dict(coords), MODEL) == coords
    assert load_coordinator_layout("none", MODEL) == []


def test_coordinator_validation():
    with pytest.raises(ValueError):
        Coordinator("C1", (0, 0), "Exit1", reaction_probability=1.5)
    with pytest.raises(CoordinationError):
        Coordinator("C1", (0, 0), "Exit9").validate(MODEL)


def test_matching_suggestion_never_influences():
    a = member(0, (0,), dest="Exit1", pos=(100.0, 100.0))
    c = Coordinator("C1", (100.0, 120.0), "Exit1", reaction_probability=1.0)
    for seed in range(50):
        assert check_influence([a], [c], np.random.default_rng(seed)) == []


def test_certain_reaction():
    a = member(0, (0, 1), pos=(100.0, 100.0), dest="Exit2")
    c = Coordinator("C1", (100.0, 150.0), "Exit1", reaction_probability=1.0)
    ev = check_influence([a], [c], np.random.default_rng(0))
    assert [(e.agent_id, e.suggestion, e.original_destination) for e in ev] == [(0, "Exit1", "Exit2")]
    far = Coordinator("C1", (100.0, 150.01), "Exit1", reaction_probability=1.0)
    assert check_influence([a], [far], np.random.default_rng(0)) == []


def _group(n, exited=()):
    ids = tuple(range(n))
    agents = {}
    for i in ids:
        state = AgentState.EXITED if i in exited else AgentState.MOVING
        agents[i] = member(i, ids, state, pos=(20.0, 20.0) if i in exited else (500.0 + i, 300.0))
    return agents


def test_cascade_resets_group():
    agents = _group(5)
    ev = InfluenceEvent(2, "C1", "Exit2", "Exit1", agents[2].position, (0, 1, 2, 3, 4))
    reset = reset_influenced_groups([ev], agents)
    assert reset == [0, 1, 2, 3, 4]
    for a in agents.values():
        assert (a.state, a.destination, a.target, a.pending_hint) == (AgentState.DISCUSSING, None, None, ("C1", "Exit1"))


def test_alone_reset_only_self():
    agents = {0: member(0, (0,)), 1: member(1, (1,))}
    reset_influenced_groups([InfluenceEvent(0, "C1", "Exit2", "Exit1", (0, 0), (0,))], agents)
    assert agents[0].state is AgentState.DISCUSSING and agents[1].state is AgentState.MOVING


def test_exited_member_untouched():
    agents = _group(4, exited={1})
    agents[1].destination, agents[1].target = "Exit1", (20.0, 20.0)
    reset = reset_influenced_groups([InfluenceEvent(0, "C1", "Exit2", "Exit1", (0, 0), (0, 1, 2, 3))], agents)
    assert reset == [0, 2, 3]
    assert agents[1].state is AgentState.EXITED and agents[1].destination == "Exit1"


def test_resume_examples():
    group = (0, 1, 2)
    t = GroupTracker()
    agents = {i: member(i, group, AgentState.WAITING) for i in group}
    for i in group:
        t.choose(group, "NorthTrack", i)
    t.arrive(0)
    t.arrive(1)
    assert resume_groups(t, agents) == []
    t.arrive(2)
    assert resume_groups(t, agents) == [0, 1, 2]
    assert all(a.state is AgentState.DISCUSSING for a in agents.values())
    assert t.chosen == {}


def test_tracker_ignores_exits_and_withdraws():
    t = GroupTracker()
    t.choose((0, 1), "Exit1", 0)
    assert t.chosen == {}
    t.choose((0, 1), "NorthTrack", 1)
    t.choose((0, 1), "SouthTrack", 1)
    assert list(t.chosen) == [((0, 1), "SouthTrack")]
    t.withdraw(1)
    assert t.chosen == {} and t.arrived == {}


def test_tracker_roundtrip():
    t = GroupTracker()
    t.choose((0, 1, 2), "NorthTrack", 0)
    t.choose((0, 1, 2), "NorthTrack", 2)
    t.arrive(2)
    u = GroupTracker.from_dict(t.to_dict())
    assert (u.chosen, u.arrived) == (t.chosen, t.arrived)
    u.check()


@given(st.lists(st.tuples(st.sampled_from(["choose", "arrive", "withdraw"]), st.integers(0, 5),
                          st.sampled_from(["NorthTrack", "SouthTrack", "Exit1"])), max_size=60))
def test_tracker_subset_invariant(ops):
    t = GroupTracker()
    group = tuple(range(6))
    for op, aid, dest in ops:
        if op == "choose":
            t.choose(group, dest, aid)
        elif op == "arrive":
            t.arrive(aid)
        else:
            t.withdraw(aid)
        t.check()
        for key, chosen in t.chosen.items():
            assert t.arrived[key] <= chosen and chosen


@given(st.integers(1, 10), st.data())
def test_reset_property(n, data):
    exited = data.draw(st.sets(st.integers(0, n - 1), max_size=n - 1))
    agents = _group(n, exited)
    for i in exited:
        agents[i].destination, agents[i].target = "Exit1", (20.0, 20.0)
    live = [i for i in range(n) if i not in exited]
    src = data.draw(st.sampled_from(live))
    reset = reset_influenced_groups([InfluenceEvent(src, "C1", "Exit2", "Exit1", (0, 0), tuple(range(n)))], agents)
    assert reset == live
    for i, a in agents.items():
        if i in exited:
            assert a.state is AgentState.EXITED
        else:
            assert a.state is AgentState.DISCUSSING and a.destination is None


def test_near_any_coordinator():
    coords = [Coordinator("C1", (0.0, 0.0), "Exit1")]
    mask = near_any_coordinator([(30, 40), (30, 40.1)], coords, 50)
    assert mask.tolist() == [True, False]
    assert near_any_coordinator([(0, 0)], [], 50).tolist() == [False]

import math
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from evacsim.agents import Agent, AgentCategory, AgentState, Persona
from evacsim.context import (
    AgentSnapshot, UnknownAgentError, build_context, describe_location, render_context_text,
)
from evacsim.coordination import Coordinator, default_coordinator_layout
from evacsim.geometry import FeatureKind, distance_category, load_layout

MODEL = load_layout()
GOLDEN = Path(__file__).parent / "golden" / "context_text.txt"
ANNOUNCEMENT = "Severe weather is approaching. Please leave the stadium calmly."


def agent(aid, pos, state=AgentState.DISCUSSING, name=None):
    return Agent(aid, Persona(name or f"Person {aid}", "bg", "History"), AgentCategory.WITH_FRIENDS, False,
                 (aid,), pos, state=state)


def golden_context():
    sec = MODEL.feature("section-1")
    origin = (sec.rect.x0, sec.rect.y0)
    people = [agent(0, (origin[0] + 25, origin[1] + 35), name="Avery Kim"),
              agent(1, (origin[0] + 30, origin[1] + 40), name="Jordan Silva"),
              agent(2, (origin[0] + 15, origin[1] + 30), name="Priya Cohen"),
              agent(3, (origin[0] + 200, origin[1] + 200))]
    coords = [Coordinator("C07", (origin[0] + 40, origin[1] + 60), "Exit1")]
    return build_context(MODEL, AgentSnapshot(people), coords, 0, ANNOUNCEMENT)


def test_golden_text():
    assert render_context_text(golden_context()) == GOLDEN.read_text()


def test_build_is_pure():
    assert golden_context() == golden_context()
    assert render_context_text(golden_context()) == render_context_text(golden_context())


def test_agent_at_exit():
    ctx = build_context(MODEL, AgentSnapshot([agent(0, (20, 20))]), [], 0)
    assert ctx.exit_rankings[0].exit.id == "Exit1" and ctx.exit_rankings[0].distance == 0
    text = render_context_text(ctx)
    assert "Exit1: 0 px, extremely close" in text


def test_isolated_agent_has_empty_lists():
    p = (150.0, 0.0)
    assert not any(f.rect.distance_to(p) <= 20 for f in MODEL.features)
    ctx = build_context(MODEL, AgentSnapshot([agent(0, p)]), [], 0)
    assert ctx.nearby_agents == () and ctx.nearby_features == ()
    assert len(ctx.exit_rankings) == 4
    text = render_context_text(ctx)
    assert "Nearby features" not in text and "People around you" not in text


def test_seating_row_column():
    for sec in MODEL.features_of(FeatureKind.SEATING):
        p = (sec.rect.x0 + 2 * sec.col_spacing, sec.rect.y0 + 3 * sec.row_spacing)
        loc = describe_location(MODEL, p)
        if loc.feature_id == sec.id:
            assert (loc.row, loc.column) == (3, 2)


def test_pathway_location_has_endpoints():
    path = MODEL.features_of(FeatureKind.PATHWAY)[0]
    loc = describe_location(MODEL, path.rect.center)
    if loc.kind is FeatureKind.PATHWAY:
        assert len(loc.endpoints) == len(path.endpoints) > 0


def test_errors():
    snap = AgentSnapshot([agent(0, (20, 20), AgentState.EXITED)])
    with pytest.raises(UnknownAgentError):
        build_context(MODEL, snap, [], 9)
    with pytest.raises(ValueError):
        build_context(MODEL, snap, [], 0)


def test_nearby_cap():
    crowd = [agent(i, (1000 + (i % 7), 100 + (i // 7))) for i in range(60)]
    ctx = build_context(MODEL, AgentSnapshot(crowd), [], 0, max_nearby_agents=30)
    assert len(ctx.nearby_agents) == 30
    d = [s.distance for s in ctx.nearby_agents]
    assert d == sorted(d)


@given(st.lists(st.tuples(st.floats(900, 1000), st.floats(100, 200)), min_size=1, max_size=40),
       st.lists(st.tuples(st.floats(850, 1050), st.floats(50, 250)), max_size=6))
def test_context_properties(points, coord_points):
    people = [agent(i, p) for i, p in enumerate(points)]
    coords = [Coordinator(f"C{i}", p, "Exit1") for i, p in enumerate(coord_points)]
    ctx = build_context(MODEL, AgentSnapshot(people), coords, 0, max_nearby_agents=1000)
    me = points[0]
    expect = sorted(i for i, p in enumerate(points) if i and math.dist(me, p) <= 20)
    assert sorted(int(s.ref) for s in ctx.nearby_agents) == expect
    for s in ctx.nearby_agents:
        d = math.dist(me, points[int(s.ref)])
        assert s.category is distance_category(d)
    for s in ctx.nearby_features:
        assert s.distance <= 20
    near = any(math.dist(me, c) <= 50 for c in coord_points)
    assert (ctx.coordinator_hint is not None) == near


def test_hint_boundary_inclusive():
    people = [agent(0, (1000.0, 100.0))]
    on = build_context(MODEL, AgentSnapshot(people), [Coordinator("C1", (1050.0, 100.0), "Exit1")], 0)
    off = build_context(MODEL, AgentSnapshot(people), [Coordinator("C1", (1050.001, 100.0), "Exit1")], 0)
    assert on.coordinator_hint == ("C1", "Exit1") and off.coordinator_hint is None


def test_default_coordinators_hint_north_exit():
    coords = default_coordinator_layout(MODEL)
    c = next(c for c in coords if c.position[1] < 600)
    ctx = build_context(MODEL, AgentSnapshot([agent(0, c.position)]), coords, 0)
    assert ctx.coordinator_hint[1] == "Exit1"

import json
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from evacsim.agents import AgentCategory
from evacsim.geometry import load_layout
from evacsim.population import (
    PopulationError, PopulationSpec, dump_population, form_friend_groups, generate_population,
    generate_scaled_population, largest_remainder, load_population, load_population_spec, partition_students,
)

SPEC = load_population_spec()
MODEL = load_layout()


@pytest.fixture(scope="module")
def full_population():
    return generate_population(SPEC, model=MODEL)


def test_default_spec_counts():
    assert SPEC.base_students == 2928
    assert SPEC.accessibility_extra == 44
    assert SPEC.partition == (2000, 800, 128)
    assert SPEC.per_major_counts["Engineering"] == 720
    assert SPEC.per_major_counts["Business"] == 240
    assert len(SPEC.per_major_counts) == 10


def test_full_population(full_population):
    agents, groups = full_population
    students = [a for a in agents if a.category is not AgentCategory.FAMILY_OR_FRIEND]
    assert len(students) == 2972
    assert sum(a.accessibility for a in agents) == 44
    assert not any(a.accessibility for a in agents if a.category is AgentCategory.FAMILY_OR_FRIEND)
    ids = [m for g in groups for m in g.members]
    assert sorted(ids) == [a.id for a in agents]
    for a in agents:
        assert a.id in a.group_id
        if a.category is AgentCategory.ALONE:
            assert len(a.group_id) == 1
    for g in groups:
        fam = [agents[m] for m in g.members if agents[m].category is AgentCategory.FAMILY_OR_FRIEND]
        if agents[g.members[0]].category is AgentCategory.WITH_FAMILY:
            assert 1 <= len(fam) <= 8


def test_accessibility_proportional(full_population):
    agents, _ = full_population
    per_major = Counter(a.persona.major for a in agents if a.accessibility)
    for major, n in SPEC.per_major_counts.items():
        assert abs(per_major.get(major, 0) - 44 * n / 2928) <= 1


@pytest.mark.parametrize("seed", range(1, 21))
def test_total_near_thirteen_thousand(seed):
    agents, _ = generate_population(replace(SPEC, seed=seed), model=MODEL)
    assert 11_000 <= len(agents) <= 15_000


def test_zero_family_range_gives_students_only():
    spec = replace(SPEC, family_size_range=(0, 0))
    agents, _ = generate_population(spec, model=MODEL)
    assert len(agents) == 2972


def test_seed_determinism_byte_identical(tmp_path):
    spec = replace(SPEC, seed=7).for_total_agents(600)
    for name in ("a.json", "b.json"):
        agents, groups = generate_population(spec, model=MODEL)
        dump_population(tmp_path / name, agents, groups, spec)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    agents, groups = load_population(tmp_path / "a.json")
    assert len(agents) == json.loads((tmp_path / "a.json").read_text())["total_agents"]


def test_partition_examples():
    rng = np.random.default_rng(0)
    students = list(range(2928))
    a, b, c = partition_students(students, (2000, 800, 128), rng)
    assert (len(a), len(b), len(c)) == (2000, 800, 128)
    assert set(a) | set(b) | set(c) == set(students)
    assert not (set(a) & set(b) or set(a) & set(c) or set(b) & set(c))
    a, b, c = partition_students(list(range(5)), (0, 0, 5), rng)
    assert c == [0, 1, 2, 3, 4] and not a and not b
    with pytest.raises(PopulationError):
        partition_students(list(range(3)), (2, 2, 0), rng)


def test_friend_group_examples():
    rng = np.random.default_rng(1)
    groups = form_friend_groups(list(range(10)), (5, 5), rng)
    assert [len(g.members) for g in groups] == [5, 5]
    groups = form_friend_groups([42], (3, 10), rng)
    assert [g.members for g in groups] == [(42,)]


@given(st.integers(1, 900), st.integers(0, 2**32 - 1))
def test_friend_groups_cover_pool(n, seed):
    groups = form_friend_groups(list(range(n)), (3, 10), np.random.default_rng(seed))
    members = sorted(m for g in groups for m in g.members)
    assert members == list(range(n))
    sizes = [len(g.members) for g in groups]
    assert all(3 <= s <= 10 for s in sizes[:-1])
    assert 1 <= sizes[-1] <= 10


def test_spec_validation():
    with pytest.raises(PopulationError):
        replace(SPEC, partition=(1, 2, 3))
    with pytest.raises(PopulationError):
        replace(SPEC, family_size_range=(2, 9))


@given(st.dictionaries(st.text(min_size=1, max_size=3), st.integers(0, 1000), min_size=1, max_size=8),
       st.integers(0, 5000))
def test_largest_remainder_sums(weights, total):
    out = largest_remainder(weights, total)
    if sum(weights.values()) == 0:
        assert all(v == 0 for v in out.values())
    else:
        assert sum(out.values()) == total
        w = sum(weights.values())
        assert all(abs(out[k] - total * weights[k] / w) < 1 for k in weights)


def test_scaled_population_hits_target():
    agents, groups = generate_scaled_population(SPEC, 1000, model=MODEL)
    assert len(agents) == 1000
    cats = Counter(a.category for a in agents)
    assert cats[AgentCategory.FAMILY_OR_FRIEND] > cats[AgentCategory.WITH_FAMILY]
    assert sorted(m for g in groups for m in g.members) == list(range(1000))

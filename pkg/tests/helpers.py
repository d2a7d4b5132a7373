"""Shared builders for the engine-level tests."""

from dataclasses import replace

from evacsim.agents import Agent, AgentCategory, Persona
from evacsim.decisions import make_stub
from evacsim.engine import RunConfig, Simulation, build_simulation
from evacsim.geometry import ExitPoint, StadiumModel, load_layout
from evacsim.population import GroupKind, SocialGroup
from evacsim.scenarios import default_scenario

DEFAULT_EXITS = (ExitPoint("Exit1", (20.0, 20.0)), ExitPoint("Exit2", (2380.0, 20.0)),
                 ExitPoint("Exit3", (20.0, 1180.0)), ExitPoint("Exit4", (2380.0, 600.0)))
OPEN_FIELD = StadiumModel(2400.0, 1200.0, (), DEFAULT_EXITS)


def lone_agents(positions):
    agents = [Agent(i, Persona(f"Solo {i}", "bg", "Art"), AgentCategory.ALONE, False, (i,), tuple(p))
              for i, p in enumerate(positions)]
    groups = [SocialGroup((i,), GroupKind.SINGLETON) for i in range(len(agents))]
    return agents, groups


def open_field_sim(positions, policy="nearest-exit", **kw):
    agents, groups = lone_agents(positions)
    return Simulation(OPEN_FIELD, agents, groups, [], make_stub(policy), **kw)


def scenario_sim(n, seed=1, coordinators="default", policy="nearest-exit", scenario=None, **cfg) -> Simulation:
    sc = replace(scenario or default_scenario(), coordinator_layout=coordinators, population_seed=seed)
    return build_simulation(RunConfig(scenario=sc, seed=seed, population_size=n, policy=policy, **cfg))

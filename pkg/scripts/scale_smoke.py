"""Full default population under the nearest-exit stub for a fixed number of rounds.

Prints per-round wall time and checks that every agent is accounted for.

    python scripts/scale_smoke.py --rounds 50
"""

import argparse
import time
from dataclasses import replace

from evacsim.engine import RunConfig, build_simulation
from evacsim.scenarios import default_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rounds", type=int, default=50)
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--population-size", type=int, default=None, help="default: the full population")
    args = ap.parse_args()

    t0 = time.perf_counter()
    sc = replace(default_scenario(), population_seed=args.seed)
    sim = build_simulation(RunConfig(scenario=sc, seed=args.seed, max_rounds=args.rounds,
                                     population_size=args.population_size))
    print(f"built {sim.total} agents, {len(sim.coordinators)} coordinators in {time.perf_counter() - t0:.1f}s")
    while not sim.done:
        t = time.perf_counter()
        log = sim.step()
        assert len(log["agents"]) + log["exited_count"] == sim.total, "agent count not conserved"
        if log["round"] % 10 == 0 or log["round"] == 1:
            print(f"round {log['round']:>4}  exited {log['exited_count']:>6}/{sim.total}  "
                  f"{time.perf_counter() - t:.2f}s")
    print(f"{sim.round} rounds in {time.perf_counter() - t0:.1f}s total")


if __name__ == "__main__":
    main()

"""Extra west exit vs the four-exit baseline, with and without coordinators.

For each population seed, compares the round at which 80% of agents have
left.  Coordinators steer agents toward Exit1/Exit3 regardless of the new
exit, which can cancel its benefit; running both layouts shows that.

    python scripts/extra_exit_experiment.py --seeds 10 --size 500
"""

import argparse
from dataclasses import replace
from pathlib import Path

import evacsim
from evacsim.engine import RunConfig, build_simulation, metric_evacuation_time
from evacsim.scenarios import default_scenario, load_scenario

EXTRA = Path(evacsim.__file__).parent / "data" / "scenarios" / "extra_exit.toml"


def t80(scenario, seed, size, coordinators):
    sc = replace(scenario, coordinator_layout=coordinators, population_seed=seed)
    res = build_simulation(RunConfig(scenario=sc, seed=seed, population_size=size)).run()
    return metric_evacuation_time(res.logs, 0.8)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--size", type=int, default=500)
    args = ap.parse_args()

    base, extra = default_scenario(), load_scenario(EXTRA)
    for layout in ("none", "default"):
        wins = 0
        print(f"coordinators: {layout}")
        print(f"{'seed':>4} {'base':>5} {'extra':>5}")
        for seed in range(1, args.seeds + 1):
            a, b = t80(base, seed, args.size, layout), t80(extra, seed, args.size, layout)
            wins += b <= a
            print(f"{seed:>4} {a:>5} {b:>5}")
        print(f"extra exit no slower in {wins}/{args.seeds} seeds\n")


if __name__ == "__main__":
    main()

"""Run the bundled policy matrix (baseline, extra exit, coordinator layouts).

    python scripts/policy_matrix.py --out runs/matrix --jobs 4
"""

import argparse
import json
from pathlib import Path

import evacsim
from evacsim.engine import RunConfig
from evacsim.scenarios import load_matrix, run_matrix

MATRIX = Path(evacsim.__file__).parent / "data" / "scenarios" / "policy_matrix.toml"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--matrix", type=Path, default=MATRIX)
    ap.add_argument("--policy", default="nearest-exit")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("runs/matrix"))
    args = ap.parse_args()

    report = run_matrix(load_matrix(args.matrix), RunConfig(policy=args.policy), jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.json").write_text(report.to_json())
    (args.out / "report.csv").write_text(report.to_csv())

    key = f"{report.fractions[-1]:g}"
    print(f"{'variant':<20} {'rep':>3} {'rounds':>6} {'t' + key:>6}  exits")
    for r in report.rows:
        t = r.metrics.get(key)
        print(f"{r.variant:<20} {r.repetition:>3} {r.rounds or '-':>6} {t if t is not None else '-':>6}  "
              f"{json.dumps(r.exit_utilization)}")


if __name__ == "__main__":
    main()

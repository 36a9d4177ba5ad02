"""Crossing vs MPC on paired synthetic sessions for each schedule kind.

    python scripts/compare_policies.py --days 40
"""

import argparse

from mpcexec.harness import FleetConfig, PolicySpec, run_fleet
from mpcexec.metrics import METRICS, improvement, summarize
from mpcexec.schedule import ScheduleKind


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--days", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    print(f"{'schedule':8} {'policy':9} " + " ".join(f"{m:>11}" for m in METRICS) + "   eps mean/std")
    for kind in ScheduleKind:
        cfg = FleetConfig(schedule=kind, days=args.days, seed=args.seed)
        runs = run_fleet(cfg, [PolicySpec("crossing"), PolicySpec("mpc")], args.workers)
        reps = {p: summarize(r) for p, r in runs.items()}
        for p, rep in reps.items():
            zs = " ".join(f"{rep.z[m][0]:11.3f}" for m in METRICS)
            print(f"{kind.value:8} {p:9} {zs}   {rep.deviation[0]:.3f}/{rep.deviation[1]:.3f}")
        imps = " ".join(f"{improvement(reps['crossing'].z[m][0], reps['mpc'].z[m][0]):10.1f}%" for m in METRICS)
        print(f"{kind.value:8} {'improve':9} {imps}")


if __name__ == "__main__":
    main()

"""Default vs oracle rollout when the market drifts against the trader."""

import argparse

import numpy as np

from mpcexec.harness import FleetConfig, PolicySpec, run_fleet
from mpcexec.marketdata import SyntheticMarketConfig
from mpcexec.metrics import improvement, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--days", type=int, default=20)
    ap.add_argument("--drift", type=float, default=10.0, help="ticks per hour")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = FleetConfig(market=SyntheticMarketConfig(drift=args.drift), adverse_drift=True, days=args.days, seed=1)
    runs = run_fleet(cfg, [PolicySpec("mpc"), PolicySpec("mpc-oracle")], args.workers)
    z = {p: np.array([summarize([r]).z_schedule for r in res]) for p, res in runs.items()}
    for p in z:
        rep = summarize(runs[p])
        print(f"{p:10} z_arrival {rep.z_arrival:8.2f}  z_schedule {rep.z_schedule:8.2f}  z_vwap {rep.z_vwap:8.2f}")
    wins = np.mean(z["mpc-oracle"] < z["mpc"])
    print(f"oracle better on {wins:.0%} of {len(z['mpc'])} days, "
          f"improvement {improvement(z['mpc'].mean(), z['mpc-oracle'].mean()):.1f}%")


if __name__ == "__main__":
    main()

"""Mean predicted deviation m_hat as the deviation weight gamma grows."""

import argparse

from mpcexec.harness import FleetConfig, PolicySpec, run_fleet
from mpcexec.metrics import summarize
from mpcexec.mpc import MpcConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--days", type=int, default=20)
    ap.add_argument("--gammas", default="0.1,1,10,100")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    gammas = [float(g) for g in args.gammas.split(",")]

    policies = [PolicySpec("mpc", f"gamma={g:g}", MpcConfig(gamma=g)) for g in gammas]
    runs = run_fleet(FleetConfig(days=args.days), policies, args.workers)
    print("gamma   mean m_hat  mean v_hat  std(eps)  z_schedule")
    for g in gammas:
        rep = summarize(runs[f"gamma={g:g}"])
        print(f"{g:<7g} {rep.mean_m_hat:11.3f} {rep.mean_v_hat:11.3f} {rep.deviation[1]:9.3f} {rep.z_schedule:11.3f}")


if __name__ == "__main__":
    main()

"""Realised deviation variance against the variance cap beta.

Prints the pooled variance of eps_t and the variance of the one-step
innovation eps_{t+1} - m_hat_t, which is what the cap controls.
"""

import argparse

import numpy as np

from mpcexec.harness import FleetConfig, PolicySpec, run_fleet
from mpcexec.metrics import improvement, summarize
from mpcexec.mpc import MpcConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--days", type=int, default=20)
    ap.add_argument("--betas", default="0.5,1,2,5,10")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    betas = [float(b) for b in args.betas.split(",")]

    policies = [PolicySpec("crossing")] + [PolicySpec("mpc", f"beta={b:g}", MpcConfig(beta=b)) for b in betas]
    runs = run_fleet(FleetConfig(days=args.days), policies, args.workers)
    base = summarize(runs["crossing"])
    print("beta   var(eps)  var(innov)  mean v_hat  z_schedule  improvement")
    for b in betas:
        res = runs[f"beta={b:g}"]
        rep = summarize(res)
        innov = np.concatenate([r.epsilon[1:] - r.m_hat for r in res]).var()
        imp = improvement(base.z_schedule, rep.z_schedule)
        print(f"{b:<6g} {rep.deviation_var:9.3f} {innov:11.3f} {rep.mean_v_hat:11.3f} {rep.z_schedule:11.3f} {imp:11.1f}%")


if __name__ == "__main__":
    main()

"""Same plan executed 0, 1 and 2 hours after estimating a slowly veering gyre."""
import argparse

from mvmf.experiments import run_drift_window

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--rate", type=float, default=15.0, help="deg/hour")
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

r = run_drift_window(args.rate, seed=args.seed)
print(f"estimate: {r.estimation.result.hyperparams}")
for d in sorted(r.deviation):
    print(f"delay {d:6.0f} s  deviation {r.deviation[d]:6.2f} m  mean tardiness {r.tardiness[d]:6.1f} s")

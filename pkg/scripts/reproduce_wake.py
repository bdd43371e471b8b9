"""Vessel cutting across a fresh drifter path: wake off, wake on, wake-safe transits."""
import argparse

from mvmf.experiments import run_wake, wake_scenario

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

sc = wake_scenario()
for label, kw in (("wake off", dict(wake=False)), ("wake on", dict(wake=True)),
                  ("wake-safe", dict(wake=True, wake_safe=True))):
    r = run_wake(sc, seed=args.seed, **kw)
    tard = ", ".join(f"{a} {t:.1f}" for a, t in sorted(r.tardiness.items()))
    print(f"{label:<10s} detours={r.detours} red progress={r.red_progress:.2f} m "
          f"conflicts={len(r.conflicts)} tardiness[s]: {tard}")
    if r.transit is not None:
        print(f"{'':<10s} rerouted legs {[k for _, k in r.transit.rerouted]}, "
              f"induced delays {({k: round(v, 1) for k, v in r.transit.delays.items()})}")

"""Drifters straddling a windrow cross; in divergence-free fields they never do."""
import argparse

from mvmf.experiments import coincident_crossings_in, gyre_truth, run_langmuir

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--seeds", type=int, default=20)
args = ap.parse_args()

counts = []
for seed in range(args.seeds):
    r = run_langmuir(seed)
    counts.append(len(r.crossings))
print(f"Langmuir crossings per seed: {counts}")
print(f"max |div| {r.max_divergence:.5f} /s vs analytic {r.analytic_divergence:.5f} /s")
g = sum(coincident_crossings_in(gyre_truth(), s) for s in range(args.seeds))
print(f"gyre, {args.seeds} noiseless pairs: {g} time-coincident crossings")

"""Dec-MCTS against exhaustive enumeration, and MCTS coverage against greedy set cover."""
import argparse
import time

from mvmf.experiments import coverage_instance, schedule_instance
from mvmf.planner import PlannerConfig, coverage, exhaustive_schedule, greedy_cover, schedule_decmcts
from mvmf.planner import select_actions_mcts

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--instances", type=int, default=20)
ap.add_argument("--skip-coverage", action="store_true")
args = ap.parse_args()

ok = 0
for seed in range(args.instances):
    vessels, actions = schedule_instance(seed)
    opt = exhaustive_schedule(vessels, actions).makespan()
    tic = time.perf_counter()
    got = schedule_decmcts(vessels, actions, PlannerConfig(seed=seed)).makespan()
    ratio = got / opt
    ok += ratio <= 1.05
    print(f"schedule {seed:2d}: optimum {opt:7.1f} s  dec-mcts {got:7.1f} s  ratio {ratio:.3f}  "
          f"{time.perf_counter() - tic:.1f} s")
print(f"within 5%: {ok}/{args.instances}")

if not args.skip_coverage:
    worse = 0
    for seed in range(args.instances):
        actions, pois = coverage_instance(seed)
        m = coverage(select_actions_mcts(actions, pois, 5, PlannerConfig(seed=seed)))
        g = coverage(greedy_cover(actions, pois, 5))
        worse += m < g
        print(f"coverage {seed:2d}: mcts {m}  greedy {g}")
    print(f"instances where MCTS trails greedy: {worse}")

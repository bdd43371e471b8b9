"""Command-line front end: estimate, plan, simulate, evaluate, replay.

Exit codes: 0 success, 2 input error, 3 infeasible plan, 1 internal error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys

import numpy as np

from .estimator import (EstimationError, covariance_raster, estimate_field, rasterize,
                        read_tracks_csv, write_tracks_csv)
from .flowfield import FlowField, GridField, divergence_many, incompressibility_report, integrate_trajectory
from .planner.actions import CandidateAction, make_action, sample_actions
from .planner.decmcts import schedule_decmcts
from .planner.schedule import (CostModel, InfeasibleError, InstanceTooLargeError, Schedule, build_schedule,
                               exhaustive_schedule, validate_schedule)
from .planner.selection import coverage, select_actions_mcts
from .planner.wake import plan_wake_safe_transits
from .scenario import Scenario, ScenarioError, load_scenario
from .sim.analysis import ReportError, detect_crossings, tardiness_report, trajectory_deviation
from .sim.drift import synthesize_tracks
from .sim.log import MissionLog
from .sim.wake import wake_conflicts
from .sim.world import SimulationError, run_mission

log = logging.getLogger("mvmf")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2, 3


class InputError(ValueError):
    pass


def _dump(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _write(path: str, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _load_json(path: str, what: str) -> dict:
    if not path or not os.path.exists(path):
        raise InputError(f"{what} file not found: {path}")
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{what} file {path} is not valid JSON: {exc}") from exc


def _seed(args, sc: Scenario) -> int:
    return sc.seed if args.seed is None else args.seed


def _onoff(v: str | None) -> bool | None:
    return None if v is None else v == "on"


def _max_divergence(field: FlowField, n: int = 100, seed: int = 0, margin: float = 2.0) -> float:
    ws = field.workspace.inset(margin)
    rng = np.random.default_rng(seed)
    pts = rng.uniform([ws.xmin, ws.ymin], [ws.xmax, ws.ymax], size=(n, 2))
    return float(np.max(np.abs(divergence_many(field, pts))))


# ---------------------------------------------------------------- estimate

def cmd_estimate(args) -> int:
    sc = load_scenario(args.scenario)
    seed = _seed(args, sc)
    ws = sc.build_workspace()
    est = sc.estimator
    os.makedirs(args.out_dir, exist_ok=True)
    if args.synthesize:
        truth = sc.build_truth()
        d = sc.drifters
        rng = np.random.default_rng(seed)
        tracks, _ = synthesize_tracks(truth, d.release_points(), d.t0, d.duration, rng, d.gps_noise_std,
                                      d.fix_interval, d.velocity_noise_std, d.receiver,
                                      float("inf") if d.comm_range is None else d.comm_range)
        write_tracks_csv(os.path.join(args.out_dir, "tracks.csv"), tracks)
    elif args.tracks:
        if not os.path.exists(args.tracks):
            raise InputError(f"tracks file not found: {args.tracks}")
        tracks = read_tracks_csv(args.tracks, noise_std=sc.drifters.gps_noise_std)
    else:
        raise InputError("estimate needs --tracks FILE or --synthesize")
    res = estimate_field(tracks, ws, est.grid.build(), est.holdout, est.subsample_interval, est.process_noise,
                         est.smooth, workers=est.workers)
    grid = rasterize(res.field, est.raster_spacing)
    _write(os.path.join(args.out_dir, "field.json"), grid.to_json() + "\n")
    _dump(os.path.join(args.out_dir, "covariance.json"), covariance_raster(res.field, est.covariance_spacing))
    div_est = _max_divergence(res.field, seed=seed)
    _dump(os.path.join(args.out_dir, "hyperparams.json"), {
        "seed": seed,
        "selected": res.hyperparams.to_dict(),
        "scores": [{**s.hp.to_dict(), "score": s.score, "error": s.error} for s in res.scores],
        "n_tracks": len(tracks),
        "n_measurements": len(res.field.measurements),
        "mean_velocity": [float(c) for c in res.field.mean_velocity],
        "max_abs_divergence": div_est,
        "divergence_ok": div_est < 1e-6,
    })
    log.info("estimated field with %s; max |div| %.2e", res.hyperparams, div_est)
    return EXIT_OK


# ---------------------------------------------------------------- plan

def _planning_field(args, sc: Scenario) -> FlowField:
    if args.field:
        if not os.path.exists(args.field):
            raise InputError(f"field file not found: {args.field}")
        with open(args.field) as fh:
            try:
                return GridField.from_json(fh.read())
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise InputError(f"bad field file {args.field}: {exc}") from exc
    return sc.build_truth()


def _action_summary(a: CandidateAction) -> dict:
    d = a.to_dict()
    d.pop("trajectory")
    return d


def _oracle(vessels, selected, cfg, sched: Schedule) -> dict:
    try:
        best, jc = exhaustive_schedule(vessels, selected, cfg.unattended_penalty, return_cost=True)
    except InstanceTooLargeError as exc:
        return {"checked": False, "reason": str(exc)}
    model = CostModel(vessels, selected, cfg.unattended_penalty)
    got = model.evaluate(sched.plans()).cost
    return {"checked": True, "oracle_makespan": best.makespan(), "makespan": sched.makespan(),
            "oracle_cost": jc.cost, "cost": got, "ratio": sched.makespan() / max(best.makespan(), 1e-12),
            "within_5pct": sched.makespan() <= 1.05 * best.makespan() + 1e-9}


def cmd_plan(args) -> int:
    sc = load_scenario(args.scenario)
    seed = _seed(args, sc)
    spec = sc.planner
    cfg = type(spec.config)(**{**spec.config.to_dict(), "seed": seed})
    wake_safe = cfg.wake_avoidance if args.wake is None else _onoff(args.wake)
    field = _planning_field(args, sc)
    ws = sc.build_workspace()
    vessels = sc.build_vessels()
    pois = sc.build_pois()
    if spec.drops is not None:
        candidates = [make_action(aid, integrate_trajectory(field, p, 0.0, spec.drift_duration, 1.0), pois)
                      for aid, p in spec.drop_points().items()]
        selected = list(candidates)
    else:
        candidates = sample_actions(field, ws, spec.n_actions, spec.drift_duration, pois, seed=seed)
        selected = select_actions_mcts(candidates, pois, spec.max_actions, cfg)
    capacity = sum(v.n_floats for v in vessels)
    if len(selected) > capacity and spec.fixed_plan is None:
        log.info("%d selected actions exceed %d floats; floats are reused after pick-up", len(selected), capacity)
    if spec.fixed_plan is not None:
        plans = {vid: tuple((str(a), str(k)) for a, k in evs) for vid, evs in spec.fixed_plan.items()}
        unknown = set(plans) - {v.id for v in vessels}
        if unknown:
            raise InputError(f"fixed_plan names unknown vessels {sorted(unknown)}")
        sched = build_schedule(vessels, plans, selected)
        problems = validate_schedule(sched, vessels, selected)
        if problems:
            raise InfeasibleError("schedule", "; ".join(problems))
    else:
        sched = schedule_decmcts(vessels, selected, cfg, field, ws)
    out = {
        "seed": seed,
        "scenario": sc.to_dict(),
        "planner": cfg.to_dict(),
        "candidates": [_action_summary(a) for a in candidates],
        "selected": [a.to_dict() for a in selected],
        "coverage": coverage(selected),
        "n_pois": len(pois),
        "schedule": sched.to_dict(),
        "makespan": sched.makespan(),
        "transit": None,
    }
    if wake_safe:
        tp = plan_wake_safe_transits(sched, vessels, selected, cfg.wake_radius, ws)
        out["transit"] = tp.to_dict()
        out["schedule"] = tp.schedule.to_dict()
        out["makespan"] = tp.schedule.makespan()
    if args.oracle_check:
        out["oracle"] = _oracle(vessels, selected, cfg, sched)
    os.makedirs(args.out_dir, exist_ok=True)
    _dump(os.path.join(args.out_dir, "plan.json"), out)
    log.info("plan: %d actions, makespan %.1f s", len(selected), out["makespan"])
    if args.oracle_check and out["oracle"].get("checked") and not out["oracle"]["within_5pct"]:
        log.warning("Dec-MCTS makespan exceeds the exhaustive optimum by more than 5%%")
    return EXIT_OK


# ---------------------------------------------------------------- simulate / evaluate / replay

def _load_plan(path: str):
    d = _load_json(path, "plan")
    try:
        actions = [CandidateAction.from_dict(a) for a in d["selected"]]
        sched = Schedule.from_dict(d["schedule"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed plan {path}: {exc}") from exc
    paths = None
    if d.get("transit"):
        paths = {vid: [np.asarray(p, float) for p in legs] for vid, legs in d["transit"]["paths"].items()}
    return d, actions, sched, paths


def build_report(log_: MissionLog, sched: Schedule, actions, truth: FlowField | None, d_wake: float) -> dict:
    rep = tardiness_report(log_, sched)
    ft = log_.float_tracks()
    ids = sorted(ft)
    crossings = {}
    for a, b in itertools.combinations(ids, 2):
        cs = detect_crossings(ft[a], ft[b])
        if cs:
            crossings[f"{a}|{b}"] = [c.to_dict() for c in cs]
    out = {
        "tardiness": rep.to_dict(),
        "deviation": trajectory_deviation(log_, actions),
        "crossings": crossings,
        "n_crossings": sum(len(v) for v in crossings.values()),
        "wake_conflicts": [c.to_dict() for c in wake_conflicts(log_.vessel_tracks(), ft, d_wake)],
        "received_fraction": log_.received_fraction(),
        "detours": len(log_.events_of("detour")),
        "losses": sorted(e["action"] for e in log_.events_of("loss")),
        "end_time": log_.end_time,
        "truncated": log_.truncated,
    }
    if truth is not None:
        t = log_.start_time
        out["incompressibility"] = incompressibility_report(truth, truth.workspace.inset(1.0), 5.0, 1e-6,
                                                            t=t).to_dict()
    return out


def _exports(log_: MissionLog, out_dir: str, origin_lonlat=None) -> None:
    _write(os.path.join(out_dir, "trajectories.csv"), log_.trajectories_csv())
    _write(os.path.join(out_dir, "events.jsonl"), log_.events_jsonl())
    _dump(os.path.join(out_dir, "mission.geojson"), log_.geojson(origin_lonlat=origin_lonlat))


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    seed = _seed(args, sc)
    plan, actions, sched, paths = _load_plan(args.plan)
    vessels = sc.build_vessels()
    vids = {v.id for v in vessels}
    if set(sched.events) - vids:
        raise InputError(f"plan vessels {sorted(sched.events)} do not match scenario fleet {sorted(vids)}")
    problems = validate_schedule(sched, vessels, actions)
    if problems:
        raise InputError("plan inconsistent with scenario: " + "; ".join(problems))
    truth = sc.build_truth(args.rotate_deg_per_hour)
    cfg = sc.sim_config(seed, _onoff(args.wake))
    log_ = run_mission(sched, vessels, truth, cfg, start_time=float(args.start_delay_s), transit_paths=paths)
    log_.config = {"seed": seed, "start_delay_s": float(args.start_delay_s), "sim": cfg.to_dict(),
                   "truth": sc.truth.to_dict() | ({"rotate_deg_per_hour": args.rotate_deg_per_hour}
                                                  if args.rotate_deg_per_hour is not None else {})}
    os.makedirs(args.out_dir, exist_ok=True)
    _dump(os.path.join(args.out_dir, "log.json"), log_.to_dict())
    # reports come from the stored log so that `evaluate` reproduces them exactly
    log_ = _load_log(os.path.join(args.out_dir, "log.json"))
    _exports(log_, args.out_dir, sc.origin_lonlat)
    report = build_report(log_, sched, actions, truth, cfg.wake.radius)
    _dump(os.path.join(args.out_dir, "report.json"), report)
    log.info("mission done at %.1f s; mean tardiness %.1f s", log_.end_time, report["tardiness"]["mean"])
    return EXIT_OK


def _load_log(path: str) -> MissionLog:
    d = _load_json(path, "log")
    try:
        return MissionLog.from_dict(d)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InputError(f"malformed log {path}: {exc}") from exc


def cmd_evaluate(args) -> int:
    log_ = _load_log(args.log)
    _, actions, sched, _ = _load_plan(args.plan)
    truth, d_wake = None, float(log_.config.get("sim", {}).get("wake", {}).get("radius", 15.0))
    if args.scenario:
        sc = load_scenario(args.scenario)
        rot = log_.config.get("truth", {}).get("rotate_deg_per_hour")
        truth = sc.build_truth(rot)
    os.makedirs(args.out_dir, exist_ok=True)
    _dump(os.path.join(args.out_dir, "report.json"), build_report(log_, sched, actions, truth, d_wake))
    return EXIT_OK


def cmd_replay(args) -> int:
    log_ = _load_log(args.log)
    origin = None
    if args.scenario:
        origin = load_scenario(args.scenario).origin_lonlat
    os.makedirs(args.out_dir, exist_ok=True)
    _exports(log_, args.out_dir, origin)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvmf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="scenario YAML file")
        sp.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
        sp.add_argument("--out-dir", default=".", help="directory for outputs")

    sp = sub.add_parser("estimate", help="estimate a flow field from drifter tracks")
    common(sp)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--tracks", help="CSV drifter_id,time_s,x_m,y_m,received")
    g.add_argument("--synthesize", action="store_true", help="simulate drifters in the truth field")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("plan", help="select actions and schedule vessels")
    common(sp)
    sp.add_argument("--field", help="GridField JSON; defaults to the scenario truth field")
    sp.add_argument("--oracle-check", action="store_true", help="compare with exhaustive enumeration")
    sp.add_argument("--wake", choices=("on", "off"), default=None, help="wake-safe vessel transits")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="execute a plan against the truth field")
    common(sp)
    sp.add_argument("--plan", required=True)
    sp.add_argument("--wake", choices=("on", "off"), default=None, help="vessel wake disturbance")
    sp.add_argument("--start-delay-s", type=float, default=0.0)
    sp.add_argument("--rotate-deg-per-hour", type=float, default=None)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("evaluate", help="recompute reports from a mission log")
    common(sp, scenario_required=False)
    sp.add_argument("--log", required=True)
    sp.add_argument("--plan", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("replay", help="re-emit CSV/JSONL/GeoJSON from a mission log")
    common(sp, scenario_required=False)
    sp.add_argument("--log", required=True)
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, ScenarioError, EstimationError, SimulationError, ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

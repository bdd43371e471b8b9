"""Desk-scale reproductions of the field-trial scenarios.

Each builder returns plain data so tests, scripts and the CLI share one
definition of every scenario.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import DrifterTrack, EstimationResult, Hyperparams, estimate_field, trajectory_prediction_error
from .flowfield import (FlowField, GyreField, LangmuirField, RotatingField, UniformField, Workspace,
                        incompressibility_report, integrate_trajectory)
from .geometry import polyline_length
from .planner.actions import CandidateAction, make_action
from .planner.schedule import Schedule, Vessel, build_schedule, exhaustive_schedule
from .planner.wake import TransitPlan, plan_wake_safe_transits
from .sim.analysis import (detect_crossings, drift_progress, heading_deviation, tardiness_report,
                           trajectory_deviation)
from .sim.drift import advect, synthesize_tracks, triangle_formation
from .sim.log import MissionLog
from .sim.wake import WakeModel, wake_conflicts
from .sim.world import SimConfig, run_mission

TRIAL_WIDTH = 390.0
DRIFT_S = 600.0


def trial_workspace() -> Workspace:
    return Workspace.centered(TRIAL_WIDTH)


def gyre_truth(peak_speed: float = 0.15) -> GyreField:
    return GyreField(peak_speed, trial_workspace())


# ---------------------------------------------------------------- estimation

@dataclass
class EstimationRun:
    result: EstimationResult
    truth: FlowField
    holdout_truth: np.ndarray  # (n, 2) true held-out drift
    holdout_error: float  # mean distance, m
    holdout_arc: float  # m
    seconds: float = 0.0

    @property
    def relative_error(self) -> float:
        return self.holdout_error / self.holdout_arc


def estimation_drifters(center=(0.0, 0.0), radius: float = 90.0) -> np.ndarray:
    return triangle_formation(center, radius)


def run_estimation(truth: FlowField | None = None, seed: int = 0, gps_noise_std: float = 3.0,
                   radius: float = 90.0, holdout_start=(-30.0, -40.0), t0: float = 0.0,
                   param_grid: list[Hyperparams] | None = None, workers: int = 1) -> EstimationRun:
    """Three drifters in a triangle for 600 s, then a held-out fourth drift."""
    import time

    truth = truth or gyre_truth()
    rng = np.random.default_rng(seed)
    starts = estimation_drifters(radius=radius)
    tracks, _ = synthesize_tracks(truth, starts, t0, DRIFT_S, rng, gps_noise_std=gps_noise_std)
    tic = time.perf_counter()
    res = estimate_field(tracks, truth.workspace, param_grid, workers=workers)
    secs = time.perf_counter() - tic
    held = integrate_trajectory(truth, holdout_start, t0, DRIFT_S, 1.0)
    htrack = DrifterTrack("holdout", held.times, held.positions, np.ones(len(held.times), bool))
    err = trajectory_prediction_error(res.field, htrack)
    return EstimationRun(res, truth, held.positions, err, polyline_length(held.positions), secs)


# ---------------------------------------------------------------- wake (Fig. 3 structure)

@dataclass
class WakeScenario:
    field: FlowField
    vessels: list[Vessel]
    actions: list[CandidateAction]
    schedule: Schedule
    red: str = "red"

    @property
    def action_map(self) -> dict[str, CandidateAction]:
        return {a.id: a for a in self.actions}


def wake_scenario(speed: float = 0.1, vessel_speed: float = 2.0) -> WakeScenario:
    """One vessel drops the red drifter, then zig-zags across its path to
    drop three more, cutting just ahead of it twice."""
    ws = trial_workspace()
    f = UniformField((speed, 0.0), ws)
    drops = {"red": (-30.0, 0.0), "green": (-10.0, 50.0), "blue": (-16.0, -50.0), "yellow": (1.4, 95.0)}
    actions = [make_action(k, integrate_trajectory(f, p, 0.0, DRIFT_S, 1.0)) for k, p in drops.items()]
    vessels = [Vessel("kimbla", drops["red"], vessel_speed, capacity=4)]
    order = ["red", "green", "blue", "yellow"]
    plan = tuple((a, "drop") for a in order) + tuple((a, "pick") for a in order)
    return WakeScenario(f, vessels, actions, build_schedule(vessels, {"kimbla": plan}, actions))


@dataclass
class WakeRun:
    log: MissionLog
    schedule: Schedule
    transit: TransitPlan | None
    tardiness: dict[str, float]
    detours: int
    red_progress: float
    conflicts: list


def run_wake(sc: WakeScenario, wake: bool = True, wake_safe: bool = False, seed: int = 0,
             wm: WakeModel | None = None) -> WakeRun:
    wm = WakeModel(**{**(wm or WakeModel()).to_dict(), "enabled": wake})
    sched, paths, tp = sc.schedule, None, None
    if wake_safe:
        tp = plan_wake_safe_transits(sc.schedule, sc.vessels, sc.actions, wm.radius, sc.field.workspace)
        sched, paths = tp.schedule, tp.paths
    log = run_mission(sched, sc.vessels, sc.field, SimConfig(seed=seed, wake=wm), transit_paths=paths)
    rep = tardiness_report(log, sched)
    return WakeRun(
        log, sched, tp,
        {a: r["tardiness"] for a, r in rep.per_action.items()},
        len(log.events_of("detour")),
        drift_progress(log, sc.action_map[sc.red]),
        wake_conflicts(log.vessel_tracks(), log.float_tracks(), wm.radius),
    )


# ---------------------------------------------------------------- quasi-static window

@dataclass
class DriftWindowRun:
    estimation: EstimationRun
    actions: list[CandidateAction]
    schedule: Schedule
    deviation: dict[float, float]  # start delay -> mean deviation, m
    tardiness: dict[float, float]  # start delay -> mean tardiness, s
    logs: dict[float, MissionLog] = field(default_factory=dict)


def run_drift_window(rate_deg_per_hour: float = 15.0, delays=(0.0, 3600.0, 7200.0), seed: int = 0,
                     gps_noise_std: float = 0.5, vessel_speed: float = 2.0,
                     param_grid: list[Hyperparams] | None = None) -> DriftWindowRun:
    """Estimate on [0, 600] s of a slowly veering gyre, plan drifts from the
    estimation release points, and execute the same plan after each delay.

    The veer is referenced to the middle of the estimation window, which is
    the instant the quasi-static estimate best represents.
    """
    truth = RotatingField(gyre_truth(), rate_deg_per_hour, t_ref=DRIFT_S / 2)
    est = run_estimation(truth, seed=seed, gps_noise_std=gps_noise_std, param_grid=param_grid)
    starts = estimation_drifters()
    actions = [make_action(f"a{i}", integrate_trajectory(est.result.field, p, 0.0, DRIFT_S, 1.0))
               for i, p in enumerate(starts)]
    vessels = [Vessel("v0", (0.0, 0.0), vessel_speed, capacity=3)]
    sched = exhaustive_schedule(vessels, actions)
    dev, tard, logs = {}, {}, {}
    for d in delays:
        log = run_mission(sched, vessels, truth, SimConfig(seed=seed, wake=WakeModel(enabled=False)),
                          start_time=float(d))
        dev[float(d)] = trajectory_deviation(log, actions)["mean"]
        tard[float(d)] = tardiness_report(log, sched).mean
        logs[float(d)] = log
    return DriftWindowRun(est, actions, sched, dev, tard, logs)


def run_rotated_truth(offset_deg: float = 20.0, seed: int = 0) -> dict:
    """Plan in a static field, execute in the same field turned by ``offset_deg``."""
    plan_field = gyre_truth()
    truth = RotatingField(plan_field, 0.0, offset_deg=offset_deg)
    drops = [(-60.0, -20.0), (40.0, 50.0)]
    actions = [make_action(f"a{i}", integrate_trajectory(plan_field, p, 0.0, DRIFT_S, 1.0))
               for i, p in enumerate(drops)]
    vessels = [Vessel("v0", (0.0, 0.0), 2.0, capacity=2)]
    sched = exhaustive_schedule(vessels, actions)
    log = run_mission(sched, vessels, truth, SimConfig(seed=seed, wake=WakeModel(enabled=False)))
    return {
        "heading_deviation": {a.id: heading_deviation(log, a) for a in actions},
        "tardiness": tardiness_report(log, sched),
        "log": log,
        "schedule": sched,
        "actions": actions,
    }


# ---------------------------------------------------------------- Langmuir crossings

@dataclass
class LangmuirRun:
    field: LangmuirField
    tracks: list
    crossings: list
    max_divergence: float
    analytic_divergence: float


def langmuir_field(amplitude: float = 0.2, wavelength: float = 50.0, along: float = 0.05) -> LangmuirField:
    return LangmuirField(along, amplitude, wavelength, trial_workspace())


def run_langmuir(seed: int = 0, separation: float = 20.0, velocity_noise_std: float = 0.01,
                 lf: LangmuirField | None = None) -> LangmuirRun:
    """Two drifters released straddling a convergence line."""
    lf = lf or langmuir_field()
    c, s = math.cos(lf.wind_direction), math.sin(lf.wind_direction)
    line = lf.phase  # cross-wind coordinate of a convergence line
    base = np.array([-100.0 * c, -100.0 * s])
    normal = np.array([-s, c])
    starts = np.array([base + (line - separation / 2) * normal, base + (line + separation / 2) * normal])
    rng = np.random.default_rng(seed)
    tracks = advect(lf, starts, 0.0, DRIFT_S, 1.0, velocity_noise_std, rng)
    rep = incompressibility_report(lf, lf.workspace.inset(5.0), step=5.0, tol=1e-4)
    return LangmuirRun(lf, tracks, detect_crossings(tracks[0], tracks[1]), rep.max_abs_divergence,
                       lf.analytic_peak_divergence())


def coincident_crossings_in(field: FlowField, seed: int, n_pairs: int = 1, duration: float = DRIFT_S,
                            dt: float = 1.0, min_gap: float = 5.0) -> int:
    """Crossings that both noiseless drifters reach within one ``dt`` of each other."""
    rng = np.random.default_rng(seed)
    ws = field.workspace.inset(0.2 * min(field.workspace.width, field.workspace.height))
    total = 0
    for _ in range(n_pairs):
        a = rng.uniform([ws.xmin, ws.ymin], [ws.xmax, ws.ymax])
        b = a + rng.uniform(-3 * min_gap, 3 * min_gap, 2)
        ta, tb = advect(field, np.array([a, b]), 0.0, duration, dt)
        total += len(detect_crossings(ta, tb, max_time_gap=dt))
    return total


# ---------------------------------------------------------------- planner benchmarks

def schedule_instance(seed: int, n_vessels: int = 2, n_actions: int = 4) -> tuple[list[Vessel], list[CandidateAction]]:
    """Random small allocation instance: uniform current, mixed drift lengths."""
    rng = np.random.default_rng(seed)
    ws = Workspace.centered(400.0)
    f = UniformField(tuple(float(c) for c in rng.uniform(-0.1, 0.1, 2)), ws)
    actions = []
    for k in range(n_actions):
        drop = rng.uniform(-120.0, 120.0, 2)
        T = float(rng.choice([300.0, 600.0]))
        actions.append(make_action(f"a{k}", integrate_trajectory(f, drop, 0.0, T, 5.0)))
    vessels = [Vessel(f"v{i}", tuple(float(c) for c in rng.uniform(-150.0, 150.0, 2)), float(rng.uniform(1.5, 3.0)),
                      capacity=int(rng.integers(1, 3))) for i in range(n_vessels)]
    return vessels, actions


def coverage_instance(seed: int, n_actions: int = 200, n_pois: int = 10, radius: float = 10.0):
    """Sampled gyre drifts and random POIs over the trial workspace."""
    from .planner.actions import POI, sample_actions

    f = gyre_truth()
    rng = np.random.default_rng(seed)
    pois = [POI(f"q{i}", tuple(float(c) for c in rng.uniform(-180.0, 180.0, 2)), radius) for i in range(n_pois)]
    return sample_actions(f, f.workspace, n_actions, DRIFT_S, pois, seed=seed, dt=5.0), pois

"""Time-stepped execution of a schedule against a truth flow field.

Floats advect by RK4 through the truth field plus Gaussian velocity noise and
the wake disturbance. Vessels are point robots that follow waypoints at
constant speed. Every adrift float emits one GPS fix per step; a fix is
received only when the float is within comm range of the receiving vessel.
"""
from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..flowfield import FlowField, Workspace, rk4_step
from ..planner.schedule import DROP, PICK, Schedule, Vessel
from .log import MissionLog
from .wake import WakeModel, wake_terms

ABOARD, ADRIFT, RETRIEVED, LOST = "aboard", "adrift", "retrieved", "lost"
IDLE_POLICIES = ("at_next", "centroid")


class SimulationError(ValueError):
    """The schedule does not fit the simulated fleet."""


@dataclass
class CommModel:
    range: float = 500.0
    receiver: str | None = None  # vessel id; None means any vessel

    def __post_init__(self):
        if self.range <= 0:
            raise ValueError("comm range must be positive")


@dataclass
class SimConfig:
    dt: float = 1.0
    capture_radius: float = 5.0
    loss_horizon: float = 1800.0
    gps_noise_std: float = 3.0
    velocity_noise_std: float = 0.01
    idle_policy: str = "at_next"
    seed: int = 0
    wake: WakeModel = field(default_factory=WakeModel)
    comm: CommModel = field(default_factory=CommModel)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.capture_radius <= 0 or self.loss_horizon <= 0:
            raise ValueError("capture radius and loss horizon must be positive")
        if self.gps_noise_std < 0 or self.velocity_noise_std < 0:
            raise ValueError("noise levels must be non-negative")
        if self.idle_policy not in IDLE_POLICIES:
            raise ValueError(f"idle_policy must be one of {IDLE_POLICIES}")
        if isinstance(self.wake, dict):
            self.wake = WakeModel(**self.wake)
        if isinstance(self.comm, dict):
            self.comm = CommModel(**self.comm)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FloatState:
    id: str
    state: str
    position: np.ndarray
    carrier: str | None = None
    action_id: str | None = None
    drop_time: float = float("nan")
    last_fix: tuple[float, np.ndarray] | None = None


@dataclass
class VesselState:
    id: str
    position: np.ndarray
    speed: float
    waypoints: list = field(default_factory=list)
    carried: list = field(default_factory=list)
    # wake exemptions: (action, site) left after a drop, (action, site) of
    # the event being approached, and the action being chased on a detour
    left_drop: tuple[str, np.ndarray] | None = None
    approaching: tuple[str, np.ndarray] | None = None
    chasing: str | None = None
    recent: deque = field(default_factory=deque)  # (t, x, y, exempt)

    def exempt(self, handling_radius: float) -> frozenset:
        ex = set()
        for item in (self.left_drop, self.approaching):
            if item is not None and np.hypot(*(self.position - item[1])) <= handling_radius:
                ex.add(item[0])
        if self.chasing is not None:
            ex.add(self.chasing)
        return frozenset(ex)

    def advance(self, dt: float) -> None:
        budget = self.speed * dt
        while self.waypoints and budget > 0:
            target = self.waypoints[0]
            gap = target - self.position
            d = float(np.hypot(*gap))
            if d <= budget + 1e-12:
                self.position = target.copy()
                budget -= d
                self.waypoints.pop(0)
            else:
                self.position = self.position + gap * (budget / d)
                budget = 0.0


@dataclass
class WorldState:
    clock: float
    field: FlowField
    vessels: dict[str, VesselState]
    floats: dict[str, FloatState]
    cfg: SimConfig
    rng: np.random.Generator
    log: MissionLog

    @property
    def workspace(self) -> Workspace:
        return self.field.workspace

    def counts(self) -> dict[str, int]:
        out = dict.fromkeys((ABOARD, ADRIFT, RETRIEVED, LOST), 0)
        for f in self.floats.values():
            out[f.state] += 1
        return out


def make_world(field: FlowField, vessels: Sequence[Vessel], cfg: SimConfig | None = None,
               t0: float = 0.0) -> WorldState:
    """World with every vessel at its start and its floats aboard."""
    cfg = cfg or SimConfig()
    vs, fs = {}, {}
    for v in vessels:
        pos = np.asarray(v.start, float)
        vs[v.id] = VesselState(v.id, pos.copy(), v.speed, carried=v.float_ids())
        for fid in v.float_ids():
            fs[fid] = FloatState(fid, ABOARD, pos.copy(), carrier=v.id)
    log = MissionLog(start_time=t0, dt=cfg.dt, config=cfg.to_dict())
    world = WorldState(float(t0), field, vs, fs, cfg, np.random.default_rng(cfg.seed), log)
    for vid in sorted(vs):
        _record_vessel(world, vs[vid])
    return world


def _record_vessel(world: WorldState, v: VesselState) -> None:
    ex = v.exempt(world.cfg.wake.handling_radius)
    v.recent.append((world.clock, v.position[0], v.position[1], ex))
    horizon = world.clock - world.cfg.wake.persistence - world.cfg.dt
    while v.recent and v.recent[0][0] < horizon:
        v.recent.popleft()
    world.log.add_row(v.id, "vessel", world.clock, v.position, True, sorted(ex))


def _receivers(world: WorldState) -> list[np.ndarray]:
    rid = world.cfg.comm.receiver
    if rid is not None:
        return [world.vessels[rid].position]
    return [v.position for v in world.vessels.values()]


def step(world: WorldState, dt: float | None = None) -> WorldState:
    """Advance floats and vessels by ``dt`` and log positions and fixes."""
    dt = world.cfg.dt if dt is None else dt
    if dt <= 0:
        raise ValueError("dt must be positive")
    cfg = world.cfg
    t = world.clock
    adrift = [f for _, f in sorted(world.floats.items()) if f.state == ADRIFT]
    if adrift:
        pos = np.array([f.position for f in adrift])
        moved, ok = rk4_step(world.field, pos, t, dt)
        for i, f in enumerate(adrift):
            stalled, push = False, np.zeros(2)
            for vid in sorted(world.vessels):
                rec = world.vessels[vid].recent
                if not rec:
                    continue
                tt = np.array([r[0] for r in rec])
                pp = np.array([(r[1], r[2]) for r in rec])
                mask = np.array([(f.action_id not in r[3]) and r[0] >= f.drop_time - 1e-9 for r in rec])
                s_i, p_i = wake_terms(tt, pp, f.position, t, cfg.wake, mask)
                stalled |= s_i
                push = push + p_i
            disp = moved[i] - f.position
            if stalled:
                disp = (1.0 - cfg.wake.stall) * disp
            disp = disp + push * dt
            if cfg.velocity_noise_std > 0:
                disp = disp + dt * world.rng.normal(0.0, cfg.velocity_noise_std, 2)
            new = f.position + disp
            if not ok[i] or not bool(world.workspace.contains(new)):
                f.state = LOST
                world.log.add_event(t + dt, "loss", None, f.id, f.action_id, f.position, detail="left workspace")
                continue
            f.position = new
    for vid in sorted(world.vessels):
        v = world.vessels[vid]
        v.advance(dt)
        for fid in v.carried:
            world.floats[fid].position = v.position.copy()
    world.clock = t + dt
    for vid in sorted(world.vessels):
        _record_vessel(world, world.vessels[vid])
    receivers = _receivers(world)
    for fid, f in sorted(world.floats.items()):
        if f.state != ADRIFT:
            continue
        world.log.add_row(fid, "float", world.clock, f.position, True)
        fix = f.position + (world.rng.normal(0.0, cfg.gps_noise_std, 2) if cfg.gps_noise_std > 0 else 0.0)
        got = any(np.hypot(*(f.position - r)) <= cfg.comm.range for r in receivers)
        world.log.add_row(fid, "fix", world.clock, fix, got)
        if got:
            f.last_fix = (world.clock, np.asarray(fix, float))
    return world


class _Agent:
    """Walks one vessel through its scheduled events."""

    def __init__(self, vid: str, events, t_offset: float, paths, world: WorldState, assignment):
        self.vid = vid
        self.events = list(events)
        self.t_offset = t_offset
        self.paths = paths
        self.assignment = assignment
        self.idx = 0
        self.phase = "transit"
        self.detour_target: np.ndarray | None = None
        self.hold_until: float | None = None
        self._route(world)

    @property
    def done(self) -> bool:
        return self.idx >= len(self.events)

    def _sched(self, k: int) -> float:
        return self.t_offset + self.events[k].time

    def _route(self, world: WorldState) -> None:
        v = world.vessels[self.vid]
        self.phase = "transit"
        self.hold_until = None
        if self.done:
            v.waypoints = []
            return
        ev = self.events[self.idx]
        target = np.asarray(ev.position, float)
        if self.paths is not None:
            v.waypoints = [np.asarray(p, float) for p in np.asarray(self.paths[self.idx])[1:]]
        elif world.cfg.idle_policy == "centroid":
            c = world.workspace.center
            via = (np.hypot(*(c - v.position)) + np.hypot(*(target - c))) / v.speed
            if world.clock + via + world.cfg.dt <= self._sched(self.idx):
                self.hold_until = self._sched(self.idx) - np.hypot(*(target - c)) / v.speed
                v.waypoints = [c]
                self.phase = "idle"
                return
            v.waypoints = [target]
        else:
            v.waypoints = [target]
        v.approaching = (ev.action_id, target)

    def update(self, world: WorldState) -> None:
        v = world.vessels[self.vid]
        while not self.done:
            ev = self.events[self.idx]
            if self.phase == "idle":
                if v.waypoints or world.clock + 1e-9 < self.hold_until:
                    return
                self.phase = "transit"
                v.waypoints = [np.asarray(ev.position, float)]
                v.approaching = (ev.action_id, np.asarray(ev.position, float))
            if self.phase == "transit":
                if v.waypoints:
                    return
                self.phase = "wait"
            if self.phase == "wait":
                if world.clock + 1e-9 < self._sched(self.idx):
                    return
                if ev.kind == DROP:
                    self._drop(world, v, ev)
                    continue
                if not self._attempt(world, v, ev):
                    return
                continue
            if self.phase == "detour":
                if not self._chase(world, v, ev):
                    return

    def _next(self, world: WorldState) -> None:
        self.idx += 1
        self._route(world)

    def _drop(self, world: WorldState, v: VesselState, ev) -> None:
        fid = self.assignment.get(ev.action_id)
        if fid is None or fid not in v.carried:
            raise SimulationError(f"vessel {v.id} does not carry the float planned for {ev.action_id}")
        v.carried.remove(fid)
        f = world.floats[fid]
        f.state, f.carrier, f.action_id = ADRIFT, None, ev.action_id
        f.position = v.position.copy()
        f.drop_time = world.clock
        f.last_fix = (world.clock, f.position.copy())
        world.log.add_event(world.clock, "drop", v.id, fid, ev.action_id, f.position, self._sched(self.idx))
        v.left_drop = (ev.action_id, f.position.copy())
        v.approaching = None
        self._next(world)

    def _float_for(self, world: WorldState, ev) -> FloatState:
        return world.floats[self.assignment[ev.action_id]]

    def _capture(self, world: WorldState, v: VesselState, f: FloatState, ev) -> None:
        f.state, f.carrier = RETRIEVED, v.id
        v.carried.append(f.id)
        f.position = v.position.copy()
        world.log.add_event(world.clock, "pick", v.id, f.id, ev.action_id, v.position, self._sched(self.idx))
        v.chasing = None
        v.approaching = None
        v.left_drop = None
        self._next(world)

    def _abandon(self, world: WorldState, v: VesselState) -> None:
        v.chasing = None
        v.approaching = None
        self._next(world)

    def _lost_check(self, world: WorldState, f: FloatState, ev) -> bool:
        if f.state == LOST:
            return True
        if world.clock > self._sched(self.idx) + world.cfg.loss_horizon:
            f.state = LOST
            world.log.add_event(world.clock, "loss", self.vid, f.id, ev.action_id, f.position,
                                self._sched(self.idx), detail="not captured within loss horizon")
            return True
        return False

    def _attempt(self, world: WorldState, v: VesselState, ev) -> bool:
        f = self._float_for(world, ev)
        if f.state != ADRIFT:
            if f.state == LOST:
                self._abandon(world, v)
                return True
            raise SimulationError(f"pick of {ev.action_id} before its float was dropped")
        d = float(np.hypot(*(f.position - v.position)))
        world.log.add_event(world.clock, "pick_attempt", v.id, f.id, ev.action_id, v.position,
                            self._sched(self.idx), detail=f"distance {d:.2f} m")
        if d <= world.cfg.capture_radius:
            self._capture(world, v, f, ev)
            return True
        self.phase = "detour"
        v.chasing = ev.action_id
        self._retarget(world, v, f, ev)
        return False

    def _retarget(self, world: WorldState, v: VesselState, f: FloatState, ev) -> None:
        target = f.last_fix[1] if f.last_fix is not None else np.asarray(ev.position, float)
        if self.detour_target is None or np.hypot(*(target - self.detour_target)) > 1e-9:
            world.log.add_event(world.clock, "detour", v.id, f.id, ev.action_id, target, self._sched(self.idx),
                                detail="retarget to last received fix")
        self.detour_target = np.asarray(target, float).copy()
        v.waypoints = [self.detour_target.copy()]

    def _chase(self, world: WorldState, v: VesselState, ev) -> bool:
        f = self._float_for(world, ev)
        if self._lost_check(world, f, ev):
            self.detour_target = None
            self._abandon(world, v)
            return True
        if np.hypot(*(f.position - v.position)) <= world.cfg.capture_radius:
            self.detour_target = None
            self._capture(world, v, f, ev)
            return True
        if not v.waypoints:
            self._retarget(world, v, f, ev)
        return False


def _next_step(world: WorldState, agents) -> float:
    """Regular step, shortened to land exactly on vessel arrivals and on
    scheduled event times so that on-plan execution is exact."""
    h = world.cfg.dt
    for a in agents:
        if a.done:
            continue
        v = world.vessels[a.vid]
        if v.waypoints:
            pts = [v.position, *v.waypoints]
            left = sum(float(np.hypot(*(q - p))) for p, q in zip(pts, pts[1:])) / v.speed
            if left > 1e-9:
                h = min(h, left)
        elif a.phase == "wait":
            gap = a._sched(a.idx) - world.clock
            if gap > 1e-9:
                h = min(h, gap)
        elif a.phase == "idle" and a.hold_until is not None and a.hold_until - world.clock > 1e-9:
            h = min(h, a.hold_until - world.clock)
    return h


def _expire(world: WorldState) -> None:
    """Floats left adrift past the loss horizon after their scheduled pick."""
    for fid, f in sorted(world.floats.items()):
        if f.state != ADRIFT:
            continue
        due = world.log.scheduled.get(f"{f.action_id}:{PICK}")
        if due is not None and world.clock > due + world.cfg.loss_horizon:
            f.state = LOST
            world.log.add_event(world.clock, "loss", None, fid, f.action_id, f.position, due,
                                detail="not captured within loss horizon")


def execute_schedule(schedule: Schedule, world: WorldState, capture_radius: float | None = None,
                     transit_paths: Mapping[str, Sequence] | None = None, max_duration: float | None = None,
                     observer=None) -> MissionLog:
    """Run ``schedule`` from the world's current clock until every vessel is
    done and no float is adrift. Scheduled times are offset by the clock."""
    if capture_radius is not None:
        world.cfg.capture_radius = capture_radius
    t_offset = world.clock
    unknown = set(schedule.events) - set(world.vessels)
    if unknown:
        raise SimulationError(f"schedule names vessels not in the world: {sorted(unknown)}")
    for vid, evs in schedule.events.items():
        for e in evs:
            world.log.scheduled[f"{e.action_id}:{e.kind}"] = t_offset + e.time
            world.log.assignment[e.action_id] = (vid, e.float_id)
    agents = [
        _Agent(vid, schedule.events[vid], t_offset, None if transit_paths is None else transit_paths.get(vid),
               world, schedule.float_assignment)
        for vid in sorted(schedule.events)
    ]
    limit = t_offset + (max_duration if max_duration is not None
                        else schedule.makespan() + world.cfg.loss_horizon + 600.0)
    while True:
        for a in agents:
            a.update(world)
        if all(a.done for a in agents) and not any(f.state == ADRIFT for f in world.floats.values()):
            break
        _expire(world)
        if world.clock >= limit:
            world.log.truncated = True
            break
        step(world, _next_step(world, agents))
        if observer is not None:
            observer(world)
    world.log.end_time = world.clock
    return world.log


def run_mission(schedule: Schedule, vessels: Sequence[Vessel], field: FlowField, cfg: SimConfig | None = None,
                start_time: float = 0.0, transit_paths=None) -> MissionLog:
    """Convenience wrapper: fresh world at ``start_time``, then execute."""
    world = make_world(field, vessels, cfg, t0=start_time)
    return execute_schedule(schedule, world, transit_paths=transit_paths)

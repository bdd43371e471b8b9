"""Vessel schedules: timing, validation, makespan and the exhaustive oracle.

A vessel's plan is an ordered tuple of ``(action_id, kind)`` events. Each
action is dropped and picked by the same vessel. Timing is earliest-start
with the pick held at exactly ``drop + duration``: when a vessel would reach
a pick late, the matching drop is postponed instead. Only when no
postponement can make every pick on time does a plan carry lateness, which
the cost charges at ``penalty`` seconds per second.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .actions import CandidateAction

DROP, PICK = "drop", "pick"
_KIND_RANK = {DROP: 0, PICK: 1}

Event = tuple[str, str]
Plan = tuple[Event, ...]


class InfeasibleError(RuntimeError):
    def __init__(self, constraint: str, detail: str = ""):
        super().__init__(f"infeasible ({constraint}): {detail}" if detail else f"infeasible ({constraint})")
        self.constraint = constraint


class InstanceTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class Vessel:
    id: str
    start: tuple[float, float]
    speed: float
    capacity: int = 2
    floats: int | None = None  # aboard at start; defaults to capacity

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError("vessel speed must be positive")
        if self.capacity < 1:
            raise ValueError("vessel capacity must be at least 1")
        if self.floats is not None and not 0 <= self.floats <= self.capacity:
            raise ValueError("initial floats must be within [0, capacity]")

    @property
    def n_floats(self) -> int:
        return self.capacity if self.floats is None else self.floats

    def float_ids(self) -> list[str]:
        return [f"{self.id}/f{k}" for k in range(self.n_floats)]

    def to_dict(self) -> dict:
        return {"id": self.id, "start": list(self.start), "speed": self.speed,
                "capacity": self.capacity, "floats": self.n_floats}


@dataclass(frozen=True)
class ScheduledEvent:
    action_id: str
    kind: str
    time: float
    position: tuple[float, float]
    float_id: str

    def to_dict(self) -> dict:
        return {"action_id": self.action_id, "kind": self.kind, "time": self.time,
                "position": list(self.position), "float_id": self.float_id}


@dataclass
class Schedule:
    events: dict[str, list[ScheduledEvent]]
    float_assignment: dict[str, str] = field(default_factory=dict)
    lateness: float = 0.0

    def makespan(self) -> float:
        return makespan(self)

    def action_ids(self) -> list[str]:
        return sorted({e.action_id for evs in self.events.values() for e in evs})

    def event(self, action_id: str, kind: str) -> tuple[str, ScheduledEvent]:
        for vid, evs in self.events.items():
            for e in evs:
                if e.action_id == action_id and e.kind == kind:
                    return vid, e
        raise KeyError((action_id, kind))

    def plans(self) -> dict[str, Plan]:
        return {vid: tuple((e.action_id, e.kind) for e in evs) for vid, evs in self.events.items()}

    def to_dict(self) -> dict:
        return {
            "makespan": self.makespan(),
            "lateness": self.lateness,
            "vessels": {vid: [e.to_dict() for e in evs] for vid, evs in self.events.items()},
            "float_assignment": dict(sorted(self.float_assignment.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        events = {
            vid: [ScheduledEvent(e["action_id"], e["kind"], float(e["time"]), tuple(e["position"]), e["float_id"])
                  for e in evs]
            for vid, evs in d["vessels"].items()
        }
        return cls(events, dict(d.get("float_assignment", {})), float(d.get("lateness", 0.0)))


def makespan(s: Schedule) -> float:
    times = [e.time for evs in s.events.values() for e in evs]
    return max(times) if times else 0.0


def event_position(actions: Mapping[str, CandidateAction], ev: Event) -> np.ndarray:
    a = actions[ev[0]]
    return a.drop_position if ev[1] == DROP else a.pick_position


def straight_legs(vessel: Vessel, plan: Plan, actions: Mapping[str, CandidateAction]) -> list[float]:
    prev = np.asarray(vessel.start, float)
    legs = []
    for ev in plan:
        p = event_position(actions, ev)
        legs.append(float(np.hypot(*(p - prev))) / vessel.speed)
        prev = p
    return legs


@dataclass
class Timing:
    times: list[float]
    lateness: float
    on_time: bool
    capacity_ok: bool

    @property
    def end(self) -> float:
        return self.times[-1] if self.times else 0.0


def capacity_ok(vessel: Vessel, plan: Plan) -> bool:
    load = vessel.n_floats
    for _, kind in plan:
        load += -1 if kind == DROP else 1
        if load < 0 or load > vessel.capacity:
            return False
    return True


def time_plan(vessel: Vessel, plan: Plan, actions: Mapping[str, CandidateAction],
              legs: Sequence[float] | None = None, t0: float = 0.0, eps: float = 1e-9) -> Timing:
    """Earliest feasible event times for one vessel's plan.

    ``legs[i]`` is the travel time into event ``i`` (straight line by
    default). Picks are pinned to drop + duration by postponing drops; this
    is Bellman-Ford on the plan's difference constraints, so failure to
    settle within ``len(plan) + 2`` sweeps means no on-time timing exists.
    """
    legs = list(legs) if legs is not None else straight_legs(vessel, plan, actions)
    n = len(plan)
    drop_at = {aid: i for i, (aid, k) in enumerate(plan) if k == DROP}
    lower = [actions[aid].earliest_drop if k == DROP else -math.inf for aid, k in plan]

    def sweep(lo):
        t = [0.0] * n
        cur = t0
        for i, (aid, k) in enumerate(plan):
            c = max(cur + legs[i], lo[i])
            if k == PICK:
                c = max(c, t[drop_at[aid]] + actions[aid].duration)
            t[i] = cur = c
        return t

    ok_cap = capacity_ok(vessel, plan)
    lo = list(lower)
    for _ in range(n + 2):
        t = sweep(lo)
        late = False
        for i, (aid, k) in enumerate(plan):
            if k == PICK:
                d = drop_at[aid]
                over = t[i] - (t[d] + actions[aid].duration)
                if over > eps:
                    lo[d] = max(lo[d], t[i] - actions[aid].duration)
                    late = True
        if not late:
            return Timing(t, 0.0, True, ok_cap)
    t = sweep(lower)
    lateness = sum(max(0.0, t[i] - t[drop_at[aid]] - actions[aid].duration)
                   for i, (aid, k) in enumerate(plan) if k == PICK)
    return Timing(t, lateness, False, ok_cap)


def plan_well_formed(plan: Plan) -> bool:
    seen_drop, seen_pick = set(), set()
    for aid, k in plan:
        if k == DROP:
            if aid in seen_drop:
                return False
            seen_drop.add(aid)
        else:
            if aid not in seen_drop or aid in seen_pick:
                return False
            seen_pick.add(aid)
    return seen_drop == seen_pick


@dataclass
class JointCost:
    cost: float
    makespan: float
    lateness: float
    missing: int
    duplicates: int
    capacity_violations: int

    @property
    def feasible(self) -> bool:
        return self.missing == 0 and self.duplicates == 0 and self.capacity_violations == 0


class CostModel:
    """Joint plan cost with per-vessel timing cache.

    cost = makespan + penalty * lateness + missing_penalty * (#unassigned)
    + duplicate_penalty * (#extra assignments); capacity violations are
    charged like missing actions.
    """

    def __init__(self, vessels: Sequence[Vessel], actions: Sequence[CandidateAction], penalty: float = 0.5,
                 missing_penalty: float | None = None, duplicate_penalty: float | None = None,
                 legs_fn: Callable[[Vessel, Plan], Sequence[float]] | None = None):
        self.vessels = list(vessels)
        self.by_id = {v.id: v for v in self.vessels}
        self.actions = {a.id: a for a in actions}
        self.penalty = penalty
        self.legs_fn = legs_fn
        self._cache: dict[tuple[str, Plan], Timing] = {}
        self.scale = self._naive_makespan()
        self.missing_penalty = 2.0 * self.scale if missing_penalty is None else missing_penalty
        self.duplicate_penalty = 0.5 * self.scale if duplicate_penalty is None else duplicate_penalty

    def _naive_makespan(self) -> float:
        carriers = [v for v in self.vessels if v.n_floats > 0]
        if not carriers or not self.actions:
            return 1.0
        v = max(carriers, key=lambda v: v.speed)
        plan = tuple(ev for aid in sorted(self.actions) for ev in ((aid, DROP), (aid, PICK)))
        return max(1.0, self.timing(v, plan).end)

    def timing(self, vessel: Vessel, plan: Plan) -> Timing:
        key = (vessel.id, plan)
        t = self._cache.get(key)
        if t is None:
            legs = self.legs_fn(vessel, plan) if self.legs_fn else None
            t = time_plan(vessel, plan, self.actions, legs)
            self._cache[key] = t
        return t

    def evaluate(self, plans: Mapping[str, Plan]) -> JointCost:
        span = 0.0
        late = 0.0
        cap = 0
        counts = dict.fromkeys(self.actions, 0)
        for vid, plan in plans.items():
            if not plan:
                continue
            tm = self.timing(self.by_id[vid], plan)
            span = max(span, tm.end)
            late += tm.lateness
            if not tm.capacity_ok:
                cap += 1
            for aid, k in plan:
                if k == DROP:
                    counts[aid] += 1
        missing = sum(1 for c in counts.values() if c == 0)
        dups = sum(c - 1 for c in counts.values() if c > 1)
        cost = (span + self.penalty * late + self.missing_penalty * (missing + cap)
                + self.duplicate_penalty * dups)
        return JointCost(cost, span, late, missing, dups, cap)


def build_schedule(vessels: Sequence[Vessel], plans: Mapping[str, Plan], actions: Sequence[CandidateAction],
                   legs_fn=None) -> Schedule:
    """Materialise timed events and per-float assignments for joint plans."""
    amap = {a.id: a for a in actions}
    events: dict[str, list[ScheduledEvent]] = {}
    assign: dict[str, str] = {}
    total_late = 0.0
    for v in vessels:
        plan = tuple(plans.get(v.id, ()))
        legs = legs_fn(v, plan) if legs_fn else None
        tm = time_plan(v, plan, amap, legs)
        total_late += tm.lateness
        aboard = v.float_ids()
        evs = []
        for (aid, k), t in zip(plan, tm.times):
            if k == DROP:
                if not aboard:
                    raise InfeasibleError("capacity", f"vessel {v.id} has no float aboard for {aid}")
                fid = aboard.pop(0)
                assign[aid] = fid
            else:
                fid = assign[aid]
                aboard.append(fid)
                aboard.sort()
            pos = event_position(amap, (aid, k))
            evs.append(ScheduledEvent(aid, k, float(t), (float(pos[0]), float(pos[1])), fid))
        events[v.id] = evs
    return Schedule(events, assign, total_late)


def validate_schedule(s: Schedule, vessels: Sequence[Vessel], actions: Sequence[CandidateAction],
                      tol: float = 1e-6, require_all: bool = True) -> list[str]:
    """Return a list of violated schedule invariants (empty when valid)."""
    amap = {a.id: a for a in actions}
    vmap = {v.id: v for v in vessels}
    problems = []
    seen: dict[tuple[str, str], float] = {}
    for vid, evs in s.events.items():
        v = vmap.get(vid)
        if v is None:
            problems.append(f"unknown vessel {vid}")
            continue
        pos = np.asarray(v.start, float)
        t_prev = 0.0
        load = v.n_floats
        for e in evs:
            p = np.asarray(e.position, float)
            need = float(np.hypot(*(p - pos))) / v.speed
            if e.time - t_prev < need - tol:
                problems.append(f"{vid}: {e.kind} {e.action_id} unreachable ({e.time - t_prev:.3f} < {need:.3f} s)")
            load += -1 if e.kind == DROP else 1
            if load < 0 or load > v.capacity:
                problems.append(f"{vid}: capacity violated at {e.kind} {e.action_id}")
            if (e.action_id, e.kind) in seen:
                problems.append(f"{e.kind} of {e.action_id} scheduled twice")
            seen[(e.action_id, e.kind)] = e.time
            pos, t_prev = p, e.time
    ids = amap.keys() if require_all else {aid for aid, _ in seen}
    for aid in ids:
        d, p = seen.get((aid, DROP)), seen.get((aid, PICK))
        if d is None and p is None:
            problems.append(f"action {aid} not scheduled")
        elif d is None or p is None:
            problems.append(f"action {aid} lacks a matching drop/pick")
        elif p - d < amap[aid].duration - tol:
            problems.append(f"action {aid} picked {p - d:.3f} s after drop, needs {amap[aid].duration}")
    return problems


# --------------------------------------------------------------------------
# exhaustive oracle

def vessel_plans(vessel: Vessel, action_ids: Sequence[str]) -> list[Plan]:
    """All well-formed, capacity-respecting orderings of the given actions."""
    ids = sorted(action_ids)
    out: list[Plan] = []
    if ids and vessel.n_floats == 0:
        return out

    def rec(prefix, dropped, picked, load):
        if len(picked) == len(ids):
            out.append(tuple(prefix))
            return
        for aid in ids:
            if aid not in dropped and load > 0:
                prefix.append((aid, DROP))
                rec(prefix, dropped | {aid}, picked, load - 1)
                prefix.pop()
        for aid in ids:
            if aid in dropped and aid not in picked and load < vessel.capacity:
                prefix.append((aid, PICK))
                rec(prefix, dropped, picked | {aid}, load + 1)
                prefix.pop()

    rec([], frozenset(), frozenset(), vessel.n_floats)
    out.sort(key=plan_key)
    return out


def plan_key(plan: Plan):
    return tuple((aid, _KIND_RANK[k]) for aid, k in plan)


def exhaustive_schedule(vessels: Sequence[Vessel], actions: Sequence[CandidateAction], penalty: float = 0.5,
                        max_events: int = 10, legs_fn=None, return_cost: bool = False):
    """Minimum-cost schedule by enumeration of every assignment and ordering.

    Ties (to 1e-9 relative) go to the lexicographically first event order.
    """
    if 2 * len(actions) > max_events:
        raise InstanceTooLargeError(f"{2 * len(actions)} events exceed the enumeration guard of {max_events}")
    vessels = list(vessels)
    ids = sorted(a.id for a in actions)
    model = CostModel(vessels, actions, penalty, legs_fn=legs_fn)
    per_subset: dict[tuple[str, frozenset], list[Plan]] = {}
    best = None
    for assign in itertools.product(range(len(vessels)), repeat=len(ids)):
        groups = [[aid for aid, g in zip(ids, assign) if g == vi] for vi in range(len(vessels))]
        options = []
        for v, grp in zip(vessels, groups):
            key = (v.id, frozenset(grp))
            if key not in per_subset:
                per_subset[key] = vessel_plans(v, grp) if grp else [()]
            options.append(per_subset[key])
        if any(not o for o in options):
            continue
        for combo in itertools.product(*options):
            plans = {v.id: p for v, p in zip(vessels, combo)}
            jc = model.evaluate(plans)
            if not jc.feasible:
                continue
            lex = tuple(plan_key(p) for p in combo)
            cand = (jc.cost, lex, plans, jc)
            if best is None or _better(cand, best):
                best = cand
    if best is None:
        raise InfeasibleError("capacity", "no vessel can carry a float")
    sched = build_schedule(vessels, best[2], actions, legs_fn)
    return (sched, best[3]) if return_cost else sched


def _better(a, b, rtol: float = 1e-9) -> bool:
    ca, cb = a[0], b[0]
    if abs(ca - cb) <= rtol * max(1.0, abs(ca), abs(cb)):
        return a[1] < b[1]
    return ca < cb

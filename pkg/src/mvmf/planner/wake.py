"""Vessel transits that keep clear of drifting floats and their future paths.

Each straight transit that conflicts with an adrift float is replaced by the
shortest route around the float's remaining drift path inflated by the wake
radius (visibility graph over the obstacle outlines). The schedule is then
retimed with the longer legs; any event that slips is reported as an induced
delay. Retiming moves drop times, so the procedure repeats until the routes
stop changing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import shapely
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from shapely.geometry import LineString, Point, Polygon
from shapely.ops import unary_union

from ..flowfield import Workspace
from ..geometry import polyline_length
from ..sim.wake import VesselTrack, WakeConflict, wake_conflicts
from .actions import CandidateAction
from .schedule import DROP, PICK, InfeasibleError, Schedule, ScheduledEvent, Vessel, time_plan


class NoClearPathError(InfeasibleError):
    def __init__(self, detail: str = ""):
        super().__init__("wake", detail)


@dataclass
class TransitPlan:
    schedule: Schedule
    paths: dict[str, list[np.ndarray]]  # per vessel, one waypoint array per leg
    delays: dict[str, float] = field(default_factory=dict)  # "action:kind" -> s
    rerouted: list[tuple[str, int]] = field(default_factory=list)
    conflicts: list[WakeConflict] = field(default_factory=list)

    @property
    def max_delay(self) -> float:
        return max(self.delays.values(), default=0.0)

    def to_dict(self) -> dict:
        return {
            "schedule": self.schedule.to_dict(),
            "paths": {vid: [p.tolist() for p in legs] for vid, legs in self.paths.items()},
            "delays": dict(sorted(self.delays.items())),
            "rerouted": [list(r) for r in self.rerouted],
            "conflicts": [c.to_dict() for c in self.conflicts],
        }


def float_tracks(schedule: Schedule, actions: Mapping[str, CandidateAction]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Predicted absolute-time track of every scheduled float while adrift."""
    out = {}
    for aid in schedule.action_ids():
        _, drop = schedule.event(aid, DROP)
        traj = actions[aid].trajectory
        out[aid] = (traj.times - traj.times[0] + drop.time, traj.positions)
    return out


def vessel_track(vessel: Vessel, events: Sequence[ScheduledEvent], paths: Sequence[np.ndarray] | None,
                 handling_radius: float, dt: float = 1.0, t0: float = 0.0) -> VesselTrack:
    """Sample a vessel's planned motion: each leg departs right after the
    previous event, follows its waypoints at speed, then waits on site."""
    pos = np.asarray(vessel.start, float)
    times, points, exempt = [], [], []
    t_prev = t0
    prev = None
    for k, ev in enumerate(events):
        path = np.asarray(paths[k], float) if paths is not None else np.array([pos, ev.position], float)
        cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(path, axis=0).T))])
        n = max(1, int(np.ceil((ev.time - t_prev) / dt)))
        ts = t_prev + np.arange(n + 1) * (ev.time - t_prev) / n
        s = np.minimum((ts - t_prev) * vessel.speed, cum[-1])
        pts = np.column_stack([np.interp(s, cum, path[:, 0]), np.interp(s, cum, path[:, 1])])
        start_i = 1 if times else 0
        for t, p in zip(ts[start_i:], pts[start_i:]):
            ex = set()
            if prev is not None and prev.kind == DROP and np.hypot(*(p - prev.position)) <= handling_radius:
                ex.add(prev.action_id)
            if np.hypot(*(p - ev.position)) <= handling_radius:
                ex.add(ev.action_id)
            times.append(t)
            points.append(p)
            exempt.append(frozenset(ex))
        pos = np.asarray(ev.position, float)
        t_prev = ev.time
        prev = ev
    if not times:
        return VesselTrack(np.array([t0]), pos[None, :], [frozenset()])
    return VesselTrack(np.array(times), np.array(points), exempt)


def _obstacles(aid_windows, t_dep: float, t_arr: float, own_drop, own_pick, d: float, handling: float,
               skip: set[str], quad_segs: int):
    polys = []
    for aid, (ft, fp) in aid_windows.items():
        if aid in skip or ft[-1] < t_dep or ft[0] > t_arr:
            continue
        keep = ft >= t_dep - 1e-9
        pts = fp[keep] if keep.sum() >= 1 else fp[-1:]
        geom = (LineString(pts).simplify(0.25) if len(pts) > 1 else Point(pts[0])).buffer(d, quad_segs=quad_segs)
        if own_drop is not None and own_drop[0] == aid:
            geom = geom.difference(Point(own_drop[1]).buffer(handling, quad_segs=quad_segs))
        if own_pick is not None and own_pick[0] == aid:
            geom = geom.difference(Point(own_pick[1]).buffer(handling, quad_segs=quad_segs))
        if not geom.is_empty:
            polys.append(geom)
    return unary_union(polys) if polys else None


def _vertices(geom) -> np.ndarray:
    pts = []
    for poly in getattr(geom, "geoms", [geom]):
        if isinstance(poly, Polygon):
            pts.extend(poly.exterior.coords[:-1])
            for ring in poly.interiors:
                pts.extend(ring.coords[:-1])
    return np.array(pts, float).reshape(-1, 2)


def shortest_clear_path(a, b, obstacles, workspace: Workspace | None = None) -> np.ndarray:
    """Shortest polyline from ``a`` to ``b`` not entering ``obstacles``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if obstacles is None or obstacles.is_empty:
        return np.array([a, b])
    inner = obstacles.buffer(-1e-6)
    if inner.contains(Point(a)) or inner.contains(Point(b)):
        raise NoClearPathError(f"transit endpoint {a.tolist()} or {b.tolist()} lies inside a float's wake zone")
    if not LineString([a, b]).intersects(inner):
        return np.array([a, b])
    verts = _vertices(obstacles)
    if workspace is not None:
        verts = verts[workspace.contains(verts)]
    nodes = np.vstack([a, b, verts])
    n = len(nodes)
    iu, ju = np.triu_indices(n, 1)
    segs = shapely.linestrings(np.stack([nodes[iu], nodes[ju]], axis=1))
    clear = ~shapely.intersects(segs, inner)
    w = np.hypot(*(nodes[iu] - nodes[ju]).T)
    iu, ju, w = iu[clear], ju[clear], w[clear]
    g = csr_matrix((np.concatenate([w, w]), (np.concatenate([iu, ju]), np.concatenate([ju, iu]))), shape=(n, n))
    dist, pred = dijkstra(g, indices=0, return_predecessors=True)
    if not np.isfinite(dist[1]):
        raise NoClearPathError(f"no wake-clear route from {a.tolist()} to {b.tolist()}")
    route = [1]
    while route[-1] != 0:
        route.append(int(pred[route[-1]]))
    return nodes[route[::-1]]


def _retime(schedule: Schedule, vessels: Mapping[str, Vessel], actions: Mapping[str, CandidateAction],
            paths: dict[str, list[np.ndarray]]) -> Schedule:
    events = {}
    for vid, evs in schedule.events.items():
        v = vessels[vid]
        plan = tuple((e.action_id, e.kind) for e in evs)
        legs = [polyline_length(p) / v.speed for p in paths[vid]]
        tm = time_plan(v, plan, actions, legs)
        events[vid] = [ScheduledEvent(e.action_id, e.kind, float(t), e.position, e.float_id)
                       for e, t in zip(evs, tm.times)]
    return Schedule(events, dict(schedule.float_assignment), schedule.lateness)


def plan_wake_safe_transits(schedule: Schedule, vessels: Sequence[Vessel], actions: Sequence[CandidateAction],
                            d_wake: float, workspace: Workspace | None = None, dt: float = 1.0,
                            margin: float | None = None, max_iter: int = 6, quad_segs: int = 4) -> TransitPlan:
    """Reroute conflicting transits around float wake zones and retime.

    ``margin`` (default ``1 + 0.05 * d_wake`` m) inflates the obstacles so
    that polygonised outlines and small execution noise stay clear.
    """
    vmap = {v.id: v for v in vessels}
    amap = {a.id: a for a in actions}
    straight = {vid: [] for vid in schedule.events}
    for vid, evs in schedule.events.items():
        prev = np.asarray(vmap[vid].start, float)
        for e in evs:
            straight[vid].append(np.array([prev, e.position], float))
            prev = np.asarray(e.position, float)
    if d_wake <= 0:
        return TransitPlan(schedule, straight)
    handling = 2.0 * d_wake
    pad = d_wake + (1.0 + 0.05 * d_wake if margin is None else margin)

    paths = {vid: list(legs) for vid, legs in straight.items()}
    flagged: set[tuple[str, int]] = set()
    current = schedule
    for _ in range(max_iter):
        fl = float_tracks(current, amap)
        tracks = {vid: vessel_track(vmap[vid], evs, paths[vid], handling, dt) for vid, evs in current.events.items()}
        conflicts = wake_conflicts(tracks, fl, d_wake)
        new_flags = set(flagged)
        for c in conflicts:
            evs = current.events[c.vessel]
            t_prev = 0.0
            for k, e in enumerate(evs):
                if t_prev - 1e-9 <= c.t_start <= e.time + 1e-9:
                    new_flags.add((c.vessel, k))
                    break
                t_prev = e.time
        if not conflicts and new_flags == flagged:
            break
        flagged = new_flags
        for vid, k in sorted(flagged):
            evs = current.events[vid]
            prev_ev = evs[k - 1] if k else None
            a = np.asarray(prev_ev.position if prev_ev else vmap[vid].start, float)
            b = np.asarray(evs[k].position, float)
            t_dep = prev_ev.time if prev_ev else 0.0
            own_drop = (prev_ev.action_id, prev_ev.position) if prev_ev is not None and prev_ev.kind == DROP else None
            own_pick = (evs[k].action_id, evs[k].position) if evs[k].kind == PICK else None
            # the vessel's own not-yet-dropped floats are not in the water yet
            skip = {e.action_id for e in evs[k:] if e.kind == DROP}
            obst = _obstacles(fl, t_dep, evs[k].time, own_drop, own_pick, pad, handling, skip, quad_segs)
            paths[vid][k] = shortest_clear_path(a, b, obst, workspace)
        current = _retime(schedule, vmap, amap, paths)

    fl = float_tracks(current, amap)
    tracks = {vid: vessel_track(vmap[vid], evs, paths[vid], handling, dt) for vid, evs in current.events.items()}
    residual = wake_conflicts(tracks, fl, d_wake)
    delays = {}
    for vid, evs in current.events.items():
        for e_new, e_old in zip(evs, schedule.events[vid]):
            slip = e_new.time - e_old.time
            if slip > 1e-6:
                delays[f"{e_new.action_id}:{e_new.kind}"] = float(slip)
    return TransitPlan(current, paths, delays, sorted(flagged), residual)

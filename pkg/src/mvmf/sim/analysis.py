"""Post-run diagnostics: trajectory crossings, tardiness, and deviations
between executed and expected float drifts."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from ..flowfield import Trajectory
from ..planner.actions import CandidateAction
from ..planner.schedule import DROP, PICK, Schedule
from .log import MissionLog


class ReportError(KeyError):
    pass


@dataclass(frozen=True)
class Crossing:
    position: tuple[float, float]
    time_a: float
    time_b: float
    segment_a: int
    segment_b: int

    @property
    def time_gap(self) -> float:
        return abs(self.time_a - self.time_b)

    def to_dict(self) -> dict:
        return asdict(self)


def _as_track(track):
    if isinstance(track, Trajectory):
        return np.asarray(track.times, float), np.asarray(track.positions, float)
    times, pos = track
    return np.asarray(times, float), np.asarray(pos, float).reshape(-1, 2)


def detect_crossings(track_a, track_b, max_time_gap: float | None = None) -> list[Crossing]:
    """All proper intersections between two polylines.

    Tracks are :class:`Trajectory` objects or ``(times, positions)`` pairs.
    Each crossing carries the interpolated passage time on both tracks;
    ``max_time_gap`` keeps only crossings both tracks pass within that many
    seconds of each other. Collinear overlaps are not crossings.
    """
    ta, pa = _as_track(track_a)
    tb, pb = _as_track(track_b)
    if len(pa) < 2 or len(pb) < 2:
        return []
    a0, a1 = pa[:-1], pa[1:]
    b0, b1 = pb[:-1], pb[1:]
    # bounding-box prefilter
    amin, amax = np.minimum(a0, a1), np.maximum(a0, a1)
    bmin, bmax = np.minimum(b0, b1), np.maximum(b0, b1)
    ov = ((amin[:, None, 0] <= bmax[None, :, 0]) & (bmin[None, :, 0] <= amax[:, None, 0])
          & (amin[:, None, 1] <= bmax[None, :, 1]) & (bmin[None, :, 1] <= amax[:, None, 1]))
    ii, jj = np.nonzero(ov)
    if ii.size == 0:
        return []
    r = a1[ii] - a0[ii]
    s = b1[jj] - b0[jj]
    qp = b0[jj] - a0[ii]
    den = r[:, 0] * s[:, 1] - r[:, 1] * s[:, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / den
        v = (qp[:, 0] * r[:, 1] - qp[:, 1] * r[:, 0]) / den
    scale = np.maximum(np.hypot(*r.T) * np.hypot(*s.T), 1e-300)
    hit = (np.abs(den) > 1e-12 * scale) & (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
    out = []
    for k in np.flatnonzero(hit):
        i, j = int(ii[k]), int(jj[k])
        pos = a0[i] + u[k] * r[k]
        t1 = ta[i] + u[k] * (ta[i + 1] - ta[i])
        t2 = tb[j] + v[k] * (tb[j + 1] - tb[j])
        if max_time_gap is not None and abs(t1 - t2) > max_time_gap:
            continue
        out.append(Crossing((float(pos[0]), float(pos[1])), float(t1), float(t2), i, j))
    out.sort(key=lambda c: (c.time_a, c.time_b))
    return out


@dataclass
class TardinessReport:
    per_action: dict[str, dict]
    mean: float
    max: float
    n_late: int
    lost: list[str]

    def to_dict(self) -> dict:
        return asdict(self)


def tardiness_report(log: MissionLog, schedule: Schedule | None = None, tol: float = 0.0) -> TardinessReport:
    """Per-action drop and pick tardiness, ``max(0, actual - scheduled)``.

    The action's tardiness is that of its pick; aggregates run over actions
    whose float was retrieved. Lost floats are listed separately.
    """
    keys = sorted(log.scheduled)
    if schedule is not None:
        wanted = {f"{e.action_id}:{e.kind}" for evs in schedule.events.values() for e in evs}
        missing = wanted - set(keys)
        if missing:
            raise ReportError(f"actions absent from the log: {sorted(missing)}")
    actions = sorted({k.split(":")[0] for k in keys})
    per, lost = {}, []
    for aid in actions:
        rec = {}
        for kind in (DROP, PICK):
            sched = log.scheduled.get(f"{aid}:{kind}")
            actual = log.event_time(aid, kind)
            rec[kind] = {"scheduled": sched, "actual": actual,
                         "tardiness": None if actual is None or sched is None else max(0.0, actual - sched)}
        if log.events_of("drop", aid) and not log.events_of("pick", aid):
            lost.append(aid)
        rec["tardiness"] = rec[PICK]["tardiness"]
        per[aid] = rec
    vals = [r["tardiness"] for r in per.values() if r["tardiness"] is not None]
    mean = float(np.mean(vals)) if vals else 0.0
    mx = float(max(vals)) if vals else 0.0
    return TardinessReport(per, mean, mx, sum(v > tol for v in vals), lost)


def _relative(times, pos, t0):
    return np.asarray(times, float) - t0, np.asarray(pos, float)


def _interp(times, pos, t):
    return np.column_stack([np.interp(t, times, pos[:, 0]), np.interp(t, times, pos[:, 1])])


def trajectory_deviation(log: MissionLog, actions: Mapping[str, CandidateAction] | list) -> dict:
    """Mean distance between each executed float drift and its expected
    trajectory, compared at equal time since drop over the drift window."""
    amap = actions if isinstance(actions, Mapping) else {a.id: a for a in actions}
    per = {}
    for aid in sorted(amap):
        if not log.events_of("drop", aid):
            continue
        et, ep = log.float_track(aid)
        et, ep = _relative(et, ep, et[0])
        traj = amap[aid].trajectory
        xt = traj.times - traj.times[0]
        window = min(et[-1], xt[-1])
        sel = et <= window + 1e-9
        if sel.sum() == 0:
            continue
        exp = _interp(xt, traj.positions, et[sel])
        per[aid] = float(np.mean(np.hypot(*(ep[sel] - exp).T)))
    mean = float(np.mean(list(per.values()))) if per else 0.0
    return {"per_action": per, "mean": mean}


def along_path_progress(positions_at_end, reference: np.ndarray) -> float:
    """Arc-length coordinate of the point on ``reference`` closest to ``positions_at_end``."""
    ref = np.asarray(reference, float)
    p = np.asarray(positions_at_end, float)
    seg = ref[1:] - ref[:-1]
    L = np.hypot(*seg.T)
    cum = np.concatenate([[0.0], np.cumsum(L)])
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.clip(np.einsum("ij,ij->i", p - ref[:-1], seg) / np.where(L > 0, L * L, 1.0), 0.0, 1.0)
    foot = ref[:-1] + u[:, None] * seg
    d = np.hypot(*(foot - p).T)
    k = int(np.argmin(d))
    return float(cum[k] + u[k] * L[k])


def drift_progress(log: MissionLog, action: CandidateAction) -> float:
    """Along-path progress of the executed float at the end of the planned drift window."""
    et, ep = log.float_track(action.id)
    t_end = min(et[0] + action.duration, et[-1])
    pos = _interp(et, ep, np.array([t_end]))[0]
    return along_path_progress(pos, action.trajectory.positions)


def heading_deviation(log: MissionLog, action: CandidateAction) -> float:
    """Signed angle (rad, counter-clockwise positive) from the expected to the
    executed drift displacement over the common window."""
    et, ep = log.float_track(action.id)
    traj = action.trajectory
    window = min(et[-1] - et[0], traj.times[-1] - traj.times[0])
    exe = _interp(et - et[0], ep, np.array([window]))[0] - ep[0]
    exp = traj.position_at(traj.times[0] + window) - traj.positions[0]
    return float(math.atan2(exp[0] * exe[1] - exp[1] * exe[0], exp @ exe))

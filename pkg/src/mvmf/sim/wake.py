"""Phenomenological vessel-wake disturbance and the space-time conflict test.

A float is disturbed when some vessel track point from the last ``tau``
seconds lies within ``d_wake`` of it. The disturbance scales the float's
advection by ``1 - stall`` and adds a constant push away from the vessel's
path line. Vessels handling a float (leaving its drop site, or approaching
its pick site) are exempt for that float inside ``2 * d_wake`` of the site.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class WakeModel:
    radius: float = 15.0
    persistence: float = 120.0
    stall: float = 0.5
    push: float = 0.02
    enabled: bool = True

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("wake radius must be non-negative")
        if not 0.0 <= self.stall <= 1.0:
            raise ValueError("stall factor must lie in [0, 1]")
        if self.persistence < 0 or self.push < 0:
            raise ValueError("persistence and push must be non-negative")

    @property
    def handling_radius(self) -> float:
        return 2.0 * self.radius

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VesselTrack:
    """Time-stamped vessel positions; ``exempt[i]`` holds the action ids the
    vessel is handling at sample ``i`` (no wake effect on those floats)."""

    times: np.ndarray
    positions: np.ndarray
    exempt: list[frozenset] = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.positions = np.asarray(self.positions, float).reshape(-1, 2)
        if not self.exempt:
            self.exempt = [frozenset()] * len(self.times)


def _push_direction(track_pos: np.ndarray, k: int, float_pos: np.ndarray) -> np.ndarray:
    lo, hi = max(k - 1, 0), min(k + 1, len(track_pos) - 1)
    heading = track_pos[hi] - track_pos[lo]
    away = float_pos - track_pos[k]
    hn = np.hypot(*heading)
    if hn < 1e-9:
        an = np.hypot(*away)
        return away / an if an > 1e-9 else np.zeros(2)
    normal = np.array([-heading[1], heading[0]]) / hn
    side = float(normal @ away)
    return normal if side >= 0 else -normal


def wake_terms(track_times, track_positions, float_pos, t: float, wm: WakeModel,
               active_mask=None) -> tuple[bool, np.ndarray]:
    """Whether the float is stalled at ``t`` and the push velocity it receives."""
    if not wm.enabled or wm.radius <= 0 or len(track_times) == 0:
        return False, np.zeros(2)
    tt = np.asarray(track_times, float)
    pp = np.asarray(track_positions, float).reshape(-1, 2)
    fp = np.asarray(float_pos, float)
    recent = (tt >= t - wm.persistence - 1e-9) & (tt <= t + 1e-9)
    if active_mask is not None:
        recent &= np.asarray(active_mask, bool)
    if not recent.any():
        return False, np.zeros(2)
    d = np.hypot(*(pp - fp).T)
    close = recent & (d <= wm.radius)
    if not close.any():
        return False, np.zeros(2)
    k = int(np.flatnonzero(close)[np.argmin(d[close])])
    return True, wm.push * _push_direction(pp, k, fp)


def wake_perturbation(vessel_track, float_pos, t: float, wm: WakeModel, flow_velocity=(0.0, 0.0)) -> np.ndarray:
    """Velocity correction added to the float's flow velocity.

    ``vessel_track`` is a :class:`VesselTrack` or an ``(n, 3)`` array of
    ``(t, x, y)`` rows.
    """
    if isinstance(vessel_track, VesselTrack):
        tt, pp = vessel_track.times, vessel_track.positions
    else:
        arr = np.asarray(vessel_track, float).reshape(-1, 3)
        tt, pp = arr[:, 0], arr[:, 1:]
    stalled, push = wake_terms(tt, pp, float_pos, t, wm)
    if not stalled:
        return np.zeros(2)
    return -wm.stall * np.asarray(flow_velocity, float) + push


@dataclass(frozen=True)
class WakeConflict:
    vessel: str
    action_id: str
    t_start: float
    t_end: float
    min_distance: float

    def to_dict(self) -> dict:
        return asdict(self)


def wake_conflicts(vessel_tracks: dict[str, VesselTrack], float_tracks: dict[str, tuple[np.ndarray, np.ndarray]],
                   d_wake: float) -> list[WakeConflict]:
    """Space-time conflicts between vessel tracks and adrift floats.

    A vessel sample at time ``t`` conflicts with a float adrift at ``t`` when
    it lies within ``d_wake`` of any part of the float's track from ``t``
    onward (its current position or its not-yet-traversed path), unless the
    vessel is handling that float. This contains every situation in which
    the wake model can fire. Consecutive conflicting samples are merged
    into one episode.
    """
    out: list[WakeConflict] = []
    if d_wake <= 0:
        return out
    for vid in sorted(vessel_tracks):
        vt = vessel_tracks[vid]
        for aid in sorted(float_tracks):
            ft, fp = float_tracks[aid]
            ft = np.asarray(ft, float)
            fp = np.asarray(fp, float).reshape(-1, 2)
            if len(ft) == 0:
                continue
            sel = np.flatnonzero((vt.times >= ft[0] - 1e-9) & (vt.times <= ft[-1] + 1e-9))
            sel = np.array([i for i in sel if aid not in vt.exempt[i]], dtype=int)
            if sel.size == 0:
                continue
            diff = vt.positions[sel, None, :] - fp[None, :, :]
            dist = np.hypot(diff[..., 0], diff[..., 1])
            # samples the float has already passed do not count
            dist[ft[None, :] < vt.times[sel, None] - 1e-9] = np.inf
            dmin = dist.min(axis=1)
            hit = dmin <= d_wake
            if not hit.any():
                continue
            idx = sel[hit]
            dm = dmin[hit]
            start = 0
            for j in range(1, len(idx) + 1):
                if j == len(idx) or idx[j] != idx[j - 1] + 1:
                    out.append(WakeConflict(vid, aid, float(vt.times[idx[start]]), float(vt.times[idx[j - 1]]),
                                            float(dm[start:j].min())))
                    start = j
    return out

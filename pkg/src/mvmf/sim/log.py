"""Mission trace: trajectories, fixes and events, plus file exports."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

TRAJ_COLUMNS = ("entity", "kind", "time_s", "x_m", "y_m", "received")
EVENT_KINDS = ("drop", "pick_attempt", "detour", "pick", "loss")


def _r(x: float) -> float:
    # fixed precision keeps exports byte-stable across platforms
    return float(f"{x:.6f}")


@dataclass
class MissionLog:
    start_time: float = 0.0
    dt: float = 1.0
    config: dict = field(default_factory=dict)
    rows: list[tuple] = field(default_factory=list)  # entity, kind, t, x, y, received, exempt
    events: list[dict] = field(default_factory=list)
    scheduled: dict[str, float] = field(default_factory=dict)  # "action:kind" -> absolute s
    assignment: dict[str, tuple[str, str]] = field(default_factory=dict)  # action -> (vessel, float)
    end_time: float = 0.0
    truncated: bool = False

    def add_row(self, entity: str, kind: str, t: float, pos, received: bool, exempt=()) -> None:
        self.rows.append((entity, kind, float(t), float(pos[0]), float(pos[1]), bool(received), tuple(exempt)))

    def add_event(self, t: float, kind: str, vessel, float_id, action_id, pos, scheduled_time=None,
                  detail: str = "") -> None:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        self.events.append({
            "time": _r(t), "kind": kind, "vessel": vessel, "float": float_id, "action": action_id,
            "x": _r(pos[0]), "y": _r(pos[1]),
            "scheduled": None if scheduled_time is None else _r(scheduled_time), "detail": detail,
        })

    # queries
    def entities(self, kind: str) -> list[str]:
        return sorted({r[0] for r in self.rows if r[1] == kind})

    def track(self, entity: str, kind: str, t_min: float = -math.inf, t_max: float = math.inf):
        sel = [r for r in self.rows if r[0] == entity and r[1] == kind and t_min - 1e-9 <= r[2] <= t_max + 1e-9]
        times = np.array([r[2] for r in sel])
        pos = np.array([(r[3], r[4]) for r in sel]).reshape(-1, 2)
        return times, pos

    def events_of(self, kind: str | None = None, action: str | None = None) -> list[dict]:
        return [e for e in self.events if (kind is None or e["kind"] == kind)
                and (action is None or e["action"] == action)]

    def event_time(self, action: str, kind: str) -> float | None:
        evs = self.events_of(kind, action)
        return evs[-1]["time"] if evs else None

    def float_track(self, action: str):
        """Executed adrift track of the float used by ``action``, starting at
        its drop position."""
        t_drop = self.event_time(action, "drop")
        if t_drop is None:
            raise KeyError(f"action {action} was never dropped")
        fid = next(e["float"] for e in self.events_of("drop", action))
        ends = [e["time"] for e in self.events if e["action"] == action and e["kind"] in ("pick", "loss")]
        t_end = min(ends) if ends else math.inf
        drop = self.events_of("drop", action)[0]
        times, pos = self.track(fid, "float", t_drop, t_end)
        return np.concatenate([[t_drop], times]), np.vstack([[drop["x"], drop["y"]], pos])

    def vessel_tracks(self):
        """Logged vessel motion as detector input."""
        from .wake import VesselTrack

        out = {}
        for vid in self.entities("vessel"):
            sel = [r for r in self.rows if r[0] == vid and r[1] == "vessel"]
            out[vid] = VesselTrack(np.array([r[2] for r in sel]), np.array([(r[3], r[4]) for r in sel]),
                                   [frozenset(r[6]) for r in sel])
        return out

    def float_tracks(self):
        out = {}
        for e in self.events_of("drop"):
            out[e["action"]] = self.float_track(e["action"])
        return out

    def received_fraction(self) -> float:
        fixes = [r for r in self.rows if r[1] == "fix"]
        return 1.0 if not fixes else sum(r[5] for r in fixes) / len(fixes)

    # exports
    def trajectories_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAJ_COLUMNS)
        for ent, kind, t, x, y, rec, _ in self.rows:
            w.writerow([ent, kind, f"{t:.6f}", f"{x:.6f}", f"{y:.6f}", int(rec)])
        return buf.getvalue()

    def events_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    def geojson(self, origin=(0.0, 0.0), origin_lonlat=None) -> dict:
        """FeatureCollection in local metres about ``origin``; when
        ``origin_lonlat`` is given, coordinates are converted to lon/lat."""
        conv = (lambda x, y: local_to_lonlat(x, y, *origin_lonlat)) if origin_lonlat else (lambda x, y: (x, y))
        feats = []
        for kind in ("vessel", "float"):
            for ent in self.entities(kind):
                times, pos = self.track(ent, kind)
                feats.append({
                    "type": "Feature",
                    "geometry": {"type": "LineString",
                                 "coordinates": [list(map(_r, conv(*p))) for p in pos]},
                    "properties": {"entity": ent, "kind": kind, "t_start": _r(times[0]), "t_end": _r(times[-1])},
                })
        for e in self.events:
            feats.append({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": list(map(_r, conv(e["x"], e["y"])))},
                "properties": {k: v for k, v in e.items() if k not in ("x", "y")},
            })
        meta = {"crs": "lonlat" if origin_lonlat else "local", "units": "m" if not origin_lonlat else "deg",
                "origin_m": [float(origin[0]), float(origin[1])]}
        if origin_lonlat:
            meta["origin_lonlat"] = [float(origin_lonlat[0]), float(origin_lonlat[1])]
        return {"type": "FeatureCollection", "metadata": meta, "features": feats}

    def to_dict(self) -> dict:
        return {
            "start_time": self.start_time, "dt": self.dt, "end_time": self.end_time, "truncated": self.truncated,
            "config": self.config, "scheduled": dict(sorted(self.scheduled.items())),
            "assignment": {k: list(v) for k, v in sorted(self.assignment.items())},
            "events": self.events,
            "rows": [[e, k, _r(t), _r(x), _r(y), int(rec), list(ex)] for e, k, t, x, y, rec, ex in self.rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MissionLog":
        log = cls(float(d["start_time"]), float(d["dt"]), dict(d.get("config", {})))
        log.end_time = float(d.get("end_time", 0.0))
        log.truncated = bool(d.get("truncated", False))
        log.scheduled = {k: float(v) for k, v in d.get("scheduled", {}).items()}
        log.assignment = {k: tuple(v) for k, v in d.get("assignment", {}).items()}
        log.events = list(d.get("events", []))
        log.rows = [(r[0], r[1], float(r[2]), float(r[3]), float(r[4]), bool(r[5]), tuple(r[6]))
                    for r in d.get("rows", [])]
        return log


def local_to_lonlat(x: float, y: float, lon0: float, lat0: float) -> tuple[float, float]:
    """Equirectangular conversion from local east/north metres."""
    r = 6371008.8
    lat = lat0 + math.degrees(y / r)
    lon = lon0 + math.degrees(x / (r * math.cos(math.radians(lat0))))
    return lon, lat
